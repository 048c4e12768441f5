use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use forcecheck_core::augment::balance_dataset;
use forcecheck_core::datagen::{generate, generate_imbalanced, GenSpec};
use forcecheck_core::dataset::{split_dataset, Dataset};
use forcecheck_core::explain::{export_attribution, gradcam, GradCamOptions, ScoreMode, Weighting};
use forcecheck_core::metrics::ConfusionMatrix;
use forcecheck_core::nn::{
    argmax_lowest, build_preset, check_class_map, evaluate, load_model, save_model, softmax, train, InputBuilder, Mode,
    ModelGraph, ModelMeta, Sample, TrainConfig,
};
use forcecheck_core::preprocess::{
    apply_normalizer, fit_normalizer, isolate_transient, Normalization, PipelineConfig,
};
use forcecheck_core::record::{ActionKind, ActionRecord, Channel, RecordMeta, WRENCH_CHANNELS};
use forcecheck_core::wavelet::{export_scaleogram, CwtConfig, CwtPlan};
use forcecheck_core::{Error, Tensor};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{hash_json, read_json_or_default, sha256_hex, RunConfig};
use crate::report::{
    branch_summaries, class_entries, write_json, write_verdicts, Metrics, RunReport, Seeds, SplitSummary, Timings,
    TrainingSummary, Verdict, VerdictRow, NO_CONTACT, REPORT_SCHEMA_VERSION,
};
use crate::{CamArgs, Cli, Command, GlobalArgs};

pub const MODEL_FILE: &str = "model.fckm";
pub const REPORT_FILE: &str = "report.json";

/// Bad invocation: exit code 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// 1 usage or configuration, 2 data, 3 numeric.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(err) if err.is_numeric() => 3,
        Some(Error::Config(_)) => 1,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    match cli.command {
        Command::Generate {
            spec,
            action,
            count,
            imbalanced,
        } => cmd_generate(&g, spec.as_deref(), action, count, imbalanced),
        Command::Preprocess { manifest, scaleograms } => cmd_preprocess(&g, &manifest, scaleograms),
        Command::Train {
            manifest,
            preset,
            action,
            final_split,
            augment,
        } => cmd_train(&g, &manifest, preset, action, final_split, augment),
        Command::Eval { model, manifest } => cmd_eval(&g, &model, &manifest),
        Command::Explain {
            model,
            record,
            class,
            branch,
            cam,
        } => cmd_explain(&g, &model, &record, &class, branch.as_deref(), cam),
        Command::Classify {
            model,
            record,
            explain,
            cam,
        } => cmd_classify(&g, &model, &record, explain, cam),
    }
}

fn out_dir(g: &GlobalArgs) -> Result<PathBuf> {
    let dir = g.out.clone().ok_or_else(|| Usage("this command needs --out <dir>".into()))?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn cmd_generate(
    g: &GlobalArgs,
    spec_path: Option<&Path>,
    action: Option<ActionKind>,
    count: Option<usize>,
    imbalanced: Option<f64>,
) -> Result<()> {
    let mut spec: GenSpec = read_json_or_default(spec_path.or(g.config.as_deref()))?;
    if let Some(k) = action {
        spec.action_kind = k;
    } else if imbalanced.is_some() && spec_path.is_none() {
        spec.action_kind = ActionKind::Knob;
    }
    if let Some(c) = count {
        spec.count_per_class = c;
    }
    if let Some(s) = g.seed {
        spec.seed = s;
    }
    let out = out_dir(g)?;
    let generated = match imbalanced {
        Some(f) => generate_imbalanced(&spec, f)?,
        None => generate(&spec)?,
    };
    let manifest = generated.save(&out)?;
    println!("{} records written, manifest {}", generated.dataset.len(), manifest.display());
    Ok(())
}

#[derive(Serialize)]
struct PreprocessEntry {
    id: String,
    class_id: u32,
    onset_index: usize,
    rule: String,
    crossings: [usize; 3],
    window: String,
    scaleograms: Vec<String>,
}

#[derive(Serialize)]
struct PreprocessSummary {
    config_hash: String,
    config: PipelineConfig,
    channels: Vec<String>,
    normalizer: Option<forcecheck_core::preprocess::NormStats>,
    records: Vec<PreprocessEntry>,
    /// Records without a detectable transient.
    no_contact: Vec<String>,
}

fn cmd_preprocess(g: &GlobalArgs, manifest: &Path, scaleograms: bool) -> Result<()> {
    let cfg: PipelineConfig = read_json_or_default(g.config.as_deref())?;
    cfg.validate()?;
    let out = out_dir(g)?;
    let data = Dataset::load_manifest(manifest)?;
    let win_dir = out.join("windows");
    fs::create_dir_all(&win_dir).with_context(|| format!("creating {}", win_dir.display()))?;

    let mut isolated = Vec::new();
    let mut no_contact = Vec::new();
    for rec in data.records() {
        match isolate_transient(rec, &cfg) {
            Ok(iso) => isolated.push((rec, iso)),
            Err(Error::NoTransient { .. }) => no_contact.push(rec.id.clone()),
            Err(e) => return Err(e.into()),
        }
    }
    // Without a split every record is fitted on; `train` refits on its training split.
    let stats = match cfg.normalization {
        Normalization::None => None,
        mode if !isolated.is_empty() => {
            let windows: Vec<Tensor<f64>> = isolated.iter().map(|(_, i)| i.window.clone()).collect();
            Some(fit_normalizer(&windows, mode)?)
        }
        _ => None,
    };
    let channels = cfg.output_channels();
    let names: Vec<String> = channels.iter().map(|c| c.name().to_string()).collect();
    let mut plan: Option<CwtPlan<f64>> = None;
    let mut entries = Vec::with_capacity(isolated.len());
    for (rec, iso) in isolated {
        let window = match &stats {
            Some(s) => apply_normalizer(&iso.window, s)?,
            None => iso.window.clone(),
        };
        let stem = file_stem(&rec.id);
        let path = win_dir.join(format!("{stem}.csv"));
        write_window_csv(&window, &names, rec.sample_rate_hz, &path)?;
        let mut scalo_paths = Vec::new();
        if scaleograms {
            let plan = match &mut plan {
                Some(p) => p,
                None => plan.insert(CwtPlan::new(window.cols(), &CwtConfig::default())?),
            };
            for (row, ch) in channels.iter().enumerate() {
                if !WRENCH_CHANNELS.contains(&ch.index()) {
                    continue;
                }
                let s = plan.scaleogram(window.row(row), ch.index())?;
                for p in export_scaleogram(&s, &out.join("scaleograms"), &format!("{stem}_{}", ch.name()))? {
                    scalo_paths.push(relative(&out, &p));
                }
            }
        }
        entries.push(PreprocessEntry {
            id: rec.id.clone(),
            class_id: rec.label.class_id,
            onset_index: iso.onset,
            rule: format!("{:?}", iso.rule).to_lowercase(),
            crossings: [iso.crossings.hi, iso.crossings.mid, iso.crossings.lo],
            window: relative(&out, &path),
            scaleograms: scalo_paths,
        });
    }
    let summary = PreprocessSummary {
        config_hash: hash_json(&cfg),
        config: cfg,
        channels: names,
        normalizer: stats,
        records: entries,
        no_contact,
    };
    let path = out.join("preprocess.json");
    write_json(&summary, &path)?;
    println!(
        "{} windows written, {} records without contact, summary {}",
        summary.records.len(),
        summary.no_contact.len(),
        path.display()
    );
    Ok(())
}

fn write_window_csv(window: &Tensor<f64>, names: &[String], fs_hz: f64, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for t in 0..window.cols() {
        let mut row = vec![format!("{}", t as f64 / fs_hz)];
        row.extend((0..window.rows()).map(|c| format!("{}", window.at2(c, t))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn relative(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

/// SHA-256 over the manifest and every record file it lists, in order.
fn dataset_hash(manifest: &Path) -> Result<String> {
    let bytes = fs::read(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| Error::InvalidDataset(e.to_string()))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut all = bytes.clone();
    for rec in value["records"].as_array().into_iter().flatten() {
        let Some(p) = rec.as_str() else { continue };
        let csv = base.join(p);
        all.extend(fs::read(&csv).with_context(|| format!("reading {}", csv.display()))?);
        if let Ok(side) = fs::read(csv.with_extension("json")) {
            all.extend(side);
        }
    }
    Ok(sha256_hex(&all))
}

struct Prepared {
    samples: Vec<Sample<f32>>,
    onsets: Vec<usize>,
}

fn prepare(ib: &mut InputBuilder<f32>, model: &ModelGraph<f32>, d: &Dataset) -> Result<Prepared> {
    check_class_map(model, d)?;
    let mut samples = Vec::with_capacity(d.len());
    let mut onsets = Vec::with_capacity(d.len());
    for r in d.records() {
        let (input, iso) = ib.from_record(model, r)?;
        let target = d.class_index(r.label.class_id).expect("validated dataset");
        samples.push(Sample { input, target });
        onsets.push(iso.onset);
    }
    Ok(Prepared { samples, onsets })
}

/// Predictions for a prepared dataset plus the confusion matrix built from them.
fn verdict_rows(model: &ModelGraph<f32>, d: &Dataset, p: &Prepared) -> Result<(Vec<VerdictRow>, ConfusionMatrix)> {
    let ids = model.class_ids();
    let names = model.class_map();
    let mut cm = ConfusionMatrix::new(model.num_classes());
    let mut rows = Vec::with_capacity(p.samples.len());
    for ((r, s), &onset) in d.records().iter().zip(&p.samples).zip(&p.onsets) {
        let probs = softmax(model.forward(&s.input, Mode::Eval)?.logits());
        let k = argmax_lowest(&probs);
        cm.record(s.target, k)?;
        rows.push(VerdictRow {
            record_id: r.id.clone(),
            true_class_id: r.label.class_id,
            true_class: r.label.class_name.clone(),
            predicted_class_id: ids[k],
            predicted_class: names[&ids[k]].clone(),
            confidence: probs[k],
            correct: k == s.target,
            onset_index: onset,
        });
    }
    Ok((rows, cm))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn cmd_train(
    g: &GlobalArgs,
    manifest: &Path,
    preset: forcecheck_core::nn::Preset,
    action: Option<ActionKind>,
    final_split: bool,
    augment: bool,
) -> Result<()> {
    let started = Instant::now();
    let mut timings = Timings {
        started_unix_s: unix_now(),
        ..Default::default()
    };
    let cfg: RunConfig = read_json_or_default(g.config.as_deref())?;
    cfg.check_preset(preset)?;
    let out = out_dir(g)?;
    let data = Dataset::load_manifest(manifest)?;
    if data.is_empty() {
        return Err(Error::InvalidDataset(format!("{} lists no records", manifest.display())).into());
    }
    let kind = data.action_kind();
    if let Some(a) = action.filter(|&a| a != kind) {
        return Err(Error::InvalidDataset(format!("--action {a} but the manifest holds {kind} records")).into());
    }

    let command_seed = g.seed.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(command_seed);
    let (split_seed, init_seed, train_seed, augment_seed) = (rng.next_u64(), rng.next_u64(), rng.next_u64(), rng.next_u64());
    let seeds = Seeds {
        command: command_seed,
        split: split_seed,
        init: init_seed,
        train: train_seed,
        augment: augment.then_some(augment_seed),
    };
    let fractions = if final_split { (0.7, 0.0, 0.3) } else { (0.6, 0.2, 0.2) };
    let (tr, va, te) = split_dataset(&data, fractions, split_seed)?;
    let originals = tr.len();

    // Normalizer statistics come from the original training records only.
    let norm = forcecheck_core::preprocess::fit_pipeline_normalizer(&tr, &cfg.pipeline)?;
    let tr = if augment {
        let policy = forcecheck_core::augment::AugmentPolicy {
            seed: augment_seed,
            ..cfg.augment.clone()
        };
        balance_dataset(&tr, &policy)?
    } else {
        tr
    };

    let meta = ModelMeta {
        preset: Some(preset),
        action_kind: Some(kind),
        pipeline: cfg.pipeline.clone(),
        norm,
        cwt: cfg.cwt.clone(),
    };
    let arch = build_preset(kind, preset, data.num_classes(), cfg.pipeline.extract_len, cfg.cwt.output_height);
    let model: ModelGraph<f32> = ModelGraph::new(arch, data.class_map().clone(), meta, init_seed)?;
    let mut ib = InputBuilder::new();
    let p_tr = prepare(&mut ib, &model, &tr)?;
    let p_va = prepare(&mut ib, &model, &va)?;
    let p_te = prepare(&mut ib, &model, &te)?;
    timings.preprocess_s = started.elapsed().as_secs_f64();

    let t_train = Instant::now();
    let tcfg = TrainConfig {
        seed: train_seed,
        ..cfg.train.clone()
    };
    let (model, history) = train(model, &p_tr.samples, &p_va.samples, &tcfg)?;
    timings.train_s = t_train.elapsed().as_secs_f64();

    let t_eval = Instant::now();
    let (rows, cm) = verdict_rows(&model, &te, &p_te)?;
    let (_, loss) = evaluate(&model, &p_te.samples)?;
    timings.eval_s = t_eval.elapsed().as_secs_f64();

    let model_path = out.join(MODEL_FILE);
    save_model(&model, &model_path)?;
    let history_path = out.join("history.csv");
    history.write_csv(&history_path)?;
    let verdicts_path = out.join("test_verdicts.csv");
    write_verdicts(&rows, &verdicts_path)?;
    let config_path = out.join("run_config.json");
    write_json(&cfg, &config_path)?;

    let mut hashes = BTreeMap::new();
    hashes.insert("run_config".into(), hash_json(&cfg));
    hashes.insert("pipeline".into(), hash_json(&cfg.pipeline));
    hashes.insert("dataset".into(), dataset_hash(manifest)?);
    hashes.insert("model".into(), sha256_hex(&fs::read(&model_path)?));
    let artifacts = [
        ("model", MODEL_FILE),
        ("history", "history.csv"),
        ("verdicts", "test_verdicts.csv"),
        ("run_config", "run_config.json"),
        ("report", REPORT_FILE),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    timings.total_s = started.elapsed().as_secs_f64();
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        command: "train".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        action_kind: kind,
        preset: Some(preset.as_str().into()),
        config_hashes: hashes,
        seeds: Some(seeds),
        split: Some(SplitSummary {
            fractions: [fractions.0, fractions.1, fractions.2],
            train: originals,
            validation: va.len(),
            test: te.len(),
            augmented: tr.len() - originals,
        }),
        class_map: class_entries(model.class_map()),
        param_count: model.param_count(),
        branches: branch_summaries(model.arch()),
        metrics: Metrics::from_confusion(&cm, model.class_map(), "test", loss),
        training: Some(TrainingSummary::from_history(&history)),
        artifacts,
        timings,
    };
    write_json(&report, &out.join(REPORT_FILE))?;
    println!(
        "{preset}: test macro-F1 {:.4} on {} records, {} parameters, report {}",
        report.metrics.macro_f1,
        te.len(),
        report.param_count,
        out.join(REPORT_FILE).display()
    );
    Ok(())
}

fn cmd_eval(g: &GlobalArgs, model_path: &Path, manifest: &Path) -> Result<()> {
    let started = Instant::now();
    let mut timings = Timings {
        started_unix_s: unix_now(),
        ..Default::default()
    };
    let out = out_dir(g)?;
    let model: ModelGraph<f32> = load_model(model_path)?;
    let data = Dataset::load_manifest(manifest)?;
    if data.is_empty() {
        return Err(Error::InvalidDataset(format!("{} lists no records", manifest.display())).into());
    }
    let mut ib = InputBuilder::new();
    let prepared = prepare(&mut ib, &model, &data)?;
    timings.preprocess_s = started.elapsed().as_secs_f64();
    let t_eval = Instant::now();
    let (rows, cm) = verdict_rows(&model, &data, &prepared)?;
    let (_, loss) = evaluate(&model, &prepared.samples)?;
    timings.eval_s = t_eval.elapsed().as_secs_f64();
    write_verdicts(&rows, &out.join("verdicts.csv"))?;

    let mut hashes = BTreeMap::new();
    hashes.insert("pipeline".into(), hash_json(&model.meta().pipeline));
    hashes.insert("dataset".into(), dataset_hash(manifest)?);
    hashes.insert("model".into(), sha256_hex(&fs::read(model_path)?));
    let mut artifacts = BTreeMap::new();
    artifacts.insert("verdicts".into(), "verdicts.csv".into());
    artifacts.insert("report".into(), REPORT_FILE.into());
    timings.total_s = started.elapsed().as_secs_f64();
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        command: "eval".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        action_kind: data.action_kind(),
        preset: model.meta().preset.map(|p| p.as_str().into()),
        config_hashes: hashes,
        seeds: None,
        split: None,
        class_map: class_entries(model.class_map()),
        param_count: model.param_count(),
        branches: branch_summaries(model.arch()),
        metrics: Metrics::from_confusion(&cm, model.class_map(), "all", loss),
        training: None,
        artifacts,
        timings,
    };
    write_json(&report, &out.join(REPORT_FILE))?;
    println!(
        "macro-F1 {:.4}, accuracy {:.4} on {} records, report {}",
        report.metrics.macro_f1,
        report.metrics.accuracy,
        data.len(),
        out.join(REPORT_FILE).display()
    );
    Ok(())
}

/// Loads a record; without a sidecar the model's action kind and `--sample-rate` are assumed.
fn load_record(path: &Path, model: &ModelGraph<f32>, sample_rate: f64) -> Result<ActionRecord> {
    if path.with_extension("json").exists() {
        return Ok(ActionRecord::load(path)?);
    }
    let meta = RecordMeta {
        id: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "record".into()),
        action_kind: model.meta().action_kind.unwrap_or(ActionKind::Button),
        sample_rate_hz: sample_rate,
        class_id: 0,
        class_name: "unlabelled".into(),
    };
    Ok(ActionRecord::load_with_meta(path, meta)?)
}

fn resolve_class(model: &ModelGraph<f32>, class: &str) -> Result<u32> {
    if let Ok(id) = class.parse::<u32>() {
        if model.class_map().contains_key(&id) {
            return Ok(id);
        }
    }
    model
        .class_map()
        .iter()
        .find(|(_, n)| n.eq_ignore_ascii_case(class))
        .map(|(&id, _)| id)
        .ok_or_else(|| {
            let known: Vec<String> = model.class_map().iter().map(|(id, n)| format!("{id}={n}")).collect();
            Usage(format!("unknown class '{class}', model classes are {}", known.join(", "))).into()
        })
}

fn cam_options(cam: CamArgs) -> GradCamOptions {
    GradCamOptions {
        score: if cam.probability { ScoreMode::Probability } else { ScoreMode::Logit },
        weighting: if cam.average { Weighting::Average } else { Weighting::Max },
    }
}

#[derive(Serialize)]
struct ExplainEntry {
    branch: String,
    source_layer: String,
    csv: String,
    png: String,
}

#[derive(Serialize)]
struct ExplainSummary {
    record_id: String,
    class_id: u32,
    class_name: String,
    onset_index: usize,
    options: GradCamOptions,
    attributions: Vec<ExplainEntry>,
}

/// Grad-CAM for every requested branch; writes the artifacts and `explain.json`.
#[allow(clippy::too_many_arguments)]
fn explain_into(
    model: &ModelGraph<f32>,
    rec: &ActionRecord,
    input: &forcecheck_core::nn::ModelInput<f32>,
    window: &Tensor<f64>,
    onset: usize,
    class_id: u32,
    branch: Option<&str>,
    opts: GradCamOptions,
    out: &Path,
) -> Result<PathBuf> {
    let arch = model.arch();
    let branches: Vec<usize> = match branch {
        Some(name) => vec![arch
            .branches
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Usage(format!("model has no branch named '{name}'")))?],
        None => (0..arch.branches.len()).filter(|&b| model.last_conv(b).is_some()).collect(),
    };
    if branches.is_empty() {
        return Err(Error::Attribution("model has no convolutional branch to explain".into()).into());
    }
    let stem = file_stem(&rec.id);
    let mut plan: Option<CwtPlan<f64>> = None;
    let mut entries = Vec::new();
    for b in branches {
        let att = gradcam(model, input, class_id, b, opts)?;
        let br = &arch.branches[b];
        let ch = br.input.channels();
        let rows = window.select_rows(ch)?;
        let names: Vec<String> = ch
            .iter()
            .map(|&c| Channel::from_index(c).map(|x| x.name().to_string()).unwrap_or_else(|| c.to_string()))
            .collect();
        let background = if br.input.is_2d() {
            let plan = match &mut plan {
                Some(p) => p,
                None => plan.insert(CwtPlan::new(window.cols(), &model.meta().cwt)?),
            };
            Some(plan.scaleogram(window.row(ch[0]), ch[0])?.values)
        } else {
            None
        };
        let (csv, png) = export_attribution(
            &att,
            &rows,
            &names,
            rec.sample_rate_hz,
            background.as_ref(),
            out,
            &format!("{stem}_{}", br.name),
        )?;
        entries.push(ExplainEntry {
            branch: att.branch.clone(),
            source_layer: att.source_layer.clone(),
            csv: relative(out, &csv),
            png: relative(out, &png),
        });
    }
    let summary = ExplainSummary {
        record_id: rec.id.clone(),
        class_id,
        class_name: model.class_map()[&class_id].clone(),
        onset_index: onset,
        options: opts,
        attributions: entries,
    };
    let path = out.join("explain.json");
    write_json(&summary, &path)?;
    Ok(path)
}

fn cmd_explain(
    g: &GlobalArgs,
    model_path: &Path,
    record: &Path,
    class: &str,
    branch: Option<&str>,
    cam: CamArgs,
) -> Result<()> {
    let out = out_dir(g)?;
    let model: ModelGraph<f32> = load_model(model_path)?;
    let class_id = resolve_class(&model, class)?;
    let rec = load_record(record, &model, cam.sample_rate)?;
    let (input, iso) = InputBuilder::new().from_record(&model, &rec)?;
    let path = explain_into(&model, &rec, &input, &iso.window, iso.onset, class_id, branch, cam_options(cam), &out)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_classify(g: &GlobalArgs, model_path: &Path, record: &Path, explain: bool, cam: CamArgs) -> Result<()> {
    if explain && g.out.is_none() {
        return Err(Usage("--explain writes attribution files and needs --out <dir>".into()).into());
    }
    let model: ModelGraph<f32> = load_model(model_path)?;
    let rec = load_record(record, &model, cam.sample_rate)?;
    let verdict = match InputBuilder::new().from_record(&model, &rec) {
        Err(Error::NoTransient { .. }) => Verdict {
            record_id: rec.id.clone(),
            class_name: NO_CONTACT.into(),
            class_id: None,
            probabilities: BTreeMap::new(),
            onset_index: None,
            attribution_path: None,
        },
        Err(e) => return Err(e.into()),
        Ok((input, iso)) => {
            let probs = softmax(model.forward(&input, Mode::Eval)?.logits());
            let k = argmax_lowest(&probs);
            let ids = model.class_ids();
            let class_id = ids[k];
            let attribution_path = if explain {
                let out = out_dir(g)?;
                let p = explain_into(&model, &rec, &input, &iso.window, iso.onset, class_id, None, cam_options(cam), &out)?;
                Some(p.to_string_lossy().into_owned())
            } else {
                None
            };
            Verdict {
                record_id: rec.id.clone(),
                class_name: model.class_map()[&class_id].clone(),
                class_id: Some(class_id),
                probabilities: ids.iter().zip(&probs).map(|(id, &p)| (model.class_map()[id].clone(), p)).collect(),
                onset_index: Some(iso.onset),
                attribution_path,
            }
        }
    };
    let text = serde_json::to_string_pretty(&verdict)?;
    if let Some(dir) = &g.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&verdict, &dir.join("verdict.json"))?;
    }
    println!("{text}");
    Ok(())
}
