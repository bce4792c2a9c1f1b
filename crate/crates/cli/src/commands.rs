use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use ehrtraj::checkpoint;
use ehrtraj::eval::{
    self, demographic_baseline, CutoffMap, EvalOptions, Grouping, Horizon, ModelScorer, ProspectiveOptions,
};
use ehrtraj::jsonl::{read_jsonl, write_atomic, write_jsonl};
use ehrtraj::seed::derive_seed;
use ehrtraj::sequence::{build_sequences, crop_to_window, recurrence_stats, Mode, SequenceOptions};
use ehrtraj::synth::{sample_cohort, HazardSpec};
use ehrtraj::train::{self as trainer, curve_csv};
use ehrtraj::vocab::{build_vocabulary, normalize_cohort, CodePolicy};
use ehrtraj::{GemTable, ModelConfig, ModelState, PatientRecord, TokenSequence, Vocabulary};

use crate::config::{self, required, Policy};
use crate::{CliError, Common};

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn out_dir(out: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = required(out, "--out")?;
    fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    let p = dir.join(name);
    write_atomic(&p, bytes.as_ref()).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn csv_of<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(data_err)?;
    }
    String::from_utf8(w.into_inner().map_err(data_err)?).map_err(data_err)
}

// ---------------------------------------------------------------------------
// synth

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Hazard specification (TOML); the bundled demo when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Number of patients.
    #[arg(long = "n")]
    n_patients: Option<usize>,
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let mut cfg: config::SynthConfig = config::load(a.common.config.as_deref())?;
    cfg.spec = a.spec.or(cfg.spec);
    cfg.n_patients = a.n_patients.unwrap_or(cfg.n_patients);
    cfg.seed = a.common.seed.unwrap_or(cfg.seed);
    cfg.out = a.common.out.or(cfg.out);
    if cfg.n_patients == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let out = out_dir(&cfg.out)?;
    let spec = match &cfg.spec {
        Some(p) => HazardSpec::load(p).map_err(data_err)?,
        None => HazardSpec::demo(),
    };
    let (records, manifest) = sample_cohort(&spec, cfg.n_patients, cfg.seed).map_err(data_err)?;
    let cutoffs = eval::synthetic_cutoffs(
        records.iter().map(|r| r.patient_id.as_str()),
        derive_seed(cfg.seed, "cutoffs"),
        cfg.cutoff_min_years,
        cfg.cutoff_max_years,
    );
    write_jsonl(&out.join("patients.jsonl"), &records).map_err(data_err)?;
    write(&out, "manifest.json", json(&manifest))?;
    write(&out, "cutoffs.csv", eval::cutoffs_csv(&cutoffs))?;
    config::write_snapshot(&out, "synth", &cfg)?;
    eprintln!(
        "synth: {} patients ({} deaths, {} rejected draws) -> {}",
        records.len(),
        manifest.deaths,
        manifest.rejected_draws,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// build-dataset

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    common: Common,
    /// patients.jsonl
    #[arg(long)]
    patients: Option<PathBuf>,
    /// ICD-9 to ICD-10 GEM crosswalk.
    #[arg(long)]
    gem: Option<PathBuf>,
    /// firstOcc or allOcc.
    #[arg(long)]
    mode: Option<Mode>,
    /// Drop categories recorded in fewer patients than this.
    #[arg(long)]
    min_patients: Option<usize>,
    /// Mean spacing of inserted no-event tokens, in days.
    #[arg(long)]
    no_event_interval_days: Option<f64>,
}

/// Written to `dataset.json` in every dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub mode: Mode,
    pub vocab_size: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

fn split_of(seed: u64, patient_id: &str, val: f64, test: f64) -> usize {
    let u = (derive_seed(seed, &format!("split/{patient_id}")) >> 11) as f64 / (1u64 << 53) as f64;
    if u < test {
        2
    } else if u < test + val {
        1
    } else {
        0
    }
}

pub fn build_dataset(a: BuildArgs) -> Result<(), CliError> {
    let mut cfg: config::BuildConfig = config::load(a.common.config.as_deref())?;
    cfg.patients = a.patients.or(cfg.patients);
    cfg.gem = a.gem.or(cfg.gem);
    cfg.mode = a.mode.unwrap_or(cfg.mode);
    cfg.min_patients = a.min_patients.unwrap_or(cfg.min_patients);
    cfg.no_event_interval_days = a.no_event_interval_days.unwrap_or(cfg.no_event_interval_days);
    cfg.seed = a.common.seed.unwrap_or(cfg.seed);
    cfg.out = a.common.out.or(cfg.out);
    let patients = required(&cfg.patients, "--patients")?;
    if cfg.min_patients == 0 {
        return Err(CliError::Usage("--min-patients must be positive".into()));
    }
    let fractions_ok = (0.0..1.0).contains(&cfg.val_fraction)
        && (0.0..1.0).contains(&cfg.test_fraction)
        && cfg.val_fraction + cfg.test_fraction < 1.0;
    if !fractions_ok {
        return Err(CliError::Usage("val_fraction + test_fraction must lie in [0, 1)".into()));
    }
    if !(cfg.no_event_interval_days > 0.0) {
        return Err(CliError::Usage("--no-event-interval-days must be positive".into()));
    }
    let out = out_dir(&cfg.out)?;

    let records: Vec<PatientRecord> = read_jsonl(&patients).map_err(data_err)?;
    for (i, r) in records.iter().enumerate() {
        r.validate()
            .map_err(|e| CliError::Data(format!("{}: record {}: {e}", patients.display(), i + 1)))?;
    }
    let gem = match &cfg.gem {
        Some(p) => Some(GemTable::load(p).map_err(data_err)?),
        None => None,
    };
    let policy = match cfg.code_policy {
        Policy::Strict => CodePolicy::Strict,
        Policy::Drop => CodePolicy::DropInvalid,
    };
    let (normalized, norm_stats) = normalize_cohort(&records, gem.as_ref(), policy)
        .map_err(|(pid, e)| CliError::Data(format!("{}: patient {pid}: {e}", patients.display())))?;
    let (vocab, removal) = build_vocabulary(&normalized, cfg.min_patients).map_err(data_err)?;
    let opts = SequenceOptions {
        mode: cfg.mode,
        no_event_mean_interval_days: cfg.no_event_interval_days,
        seed: derive_seed(cfg.seed, "sequences"),
    };
    let (seqs, skipped) = build_sequences(&normalized, &vocab, &opts);
    let mut parts: [Vec<TokenSequence>; 3] = Default::default();
    for s in &seqs {
        parts[split_of(cfg.seed, &s.patient_id, cfg.val_fraction, cfg.test_fraction)].push(s.clone());
    }
    for (name, part) in SPLITS.iter().zip(&parts) {
        write_jsonl(&out.join(format!("{name}.jsonl")), part).map_err(data_err)?;
    }
    write(&out, "vocab.json", vocab.to_json())?;
    let meta = DatasetMeta {
        mode: cfg.mode,
        vocab_size: vocab.len(),
        n_train: parts[0].len(),
        n_val: parts[1].len(),
        n_test: parts[2].len(),
    };
    write(&out, "dataset.json", json(&meta))?;
    let stats = serde_json::json!({
        "events_in": norm_stats.events_in,
        "events_dropped": norm_stats.events_dropped,
        "patients_dropped_in_normalisation": norm_stats.patients_dropped,
        "patients_without_vocabulary_events": skipped,
        "vocabulary": removal,
        "recurrence": recurrence_stats(&seqs, &vocab),
    });
    write(&out, "dataset_stats.json", json(&stats))?;
    config::write_snapshot(&out, "build-dataset", &cfg)?;
    eprintln!(
        "build-dataset: vocab {} ({} categories removed), {} train / {} val / {} test",
        vocab.len(),
        removal.categories_removed,
        meta.n_train,
        meta.n_val,
        meta.n_test
    );
    Ok(())
}

fn load_meta(data: &Path) -> Result<DatasetMeta, CliError> {
    let p = data.join("dataset.json");
    let text = fs::read_to_string(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
}

fn load_vocab(data: &Path) -> Result<Vocabulary, CliError> {
    let p = data.join("vocab.json");
    Vocabulary::load(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
}

fn load_split(data: &Path, split: &str) -> Result<Vec<TokenSequence>, CliError> {
    if !SPLITS.contains(&split) {
        return Err(CliError::Usage(format!("unknown split {split:?} (expected train, val or test)")));
    }
    read_jsonl(&data.join(format!("{split}.jsonl"))).map_err(data_err)
}

fn load_checkpoint(dir: &Path) -> Result<ModelState<f32>, CliError> {
    checkpoint::load(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory written by build-dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    warmup_iters: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    lr_max: Option<f64>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    context_len: Option<usize>,
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg: config::TrainRunConfig = config::load(a.common.config.as_deref())?;
    cfg.data = a.data.or(cfg.data);
    cfg.out = a.common.out.or(cfg.out);
    let t = &mut cfg.train;
    t.seed = a.common.seed.unwrap_or(t.seed);
    t.max_iters = a.max_iters.unwrap_or(t.max_iters);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.warmup_iters = a.warmup_iters.unwrap_or(t.warmup_iters);
    t.eval_interval = a.eval_interval.unwrap_or(t.eval_interval);
    t.lr_max = a.lr_max.unwrap_or(t.lr_max);
    let m = &mut cfg.model;
    m.n_layers = a.n_layers.unwrap_or(m.n_layers);
    m.n_heads = a.n_heads.unwrap_or(m.n_heads);
    m.embed_dim = a.embed_dim.unwrap_or(m.embed_dim);
    m.context_len = a.context_len.or(m.context_len);
    cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let data = required(&cfg.data, "--data")?;
    let out = out_dir(&cfg.out)?;

    let meta = load_meta(&data)?;
    let context_len = cfg.model.context_len.unwrap_or(meta.mode.default_context_len());
    let model_cfg = ModelConfig {
        n_layers: cfg.model.n_layers,
        n_heads: cfg.model.n_heads,
        embed_dim: cfg.model.embed_dim,
        context_len,
        vocab_size: meta.vocab_size,
        mode: meta.mode,
        age_scale_days: cfg.model.age_scale_days,
    };
    model_cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if context_len <= ehrtraj::sequence::N_STATIC {
        return Err(CliError::Usage("context_len must exceed the three static tokens".into()));
    }
    let crop = |v: Vec<TokenSequence>| -> Vec<TokenSequence> {
        v.iter().map(|s| crop_to_window(s, context_len, false)).collect()
    };
    let train_seqs = crop(load_split(&data, "train")?);
    let val_seqs = crop(load_split(&data, "val")?);
    let init_seed = cfg.model.init_seed.unwrap_or(cfg.train.seed);
    let state = ModelState::<f32>::init(model_cfg, init_seed).map_err(|e| CliError::Usage(e.to_string()))?;
    eprintln!("train: {} parameters, {} train / {} val sequences", state.n_params(), train_seqs.len(), val_seqs.len());
    let outcome = trainer::train(state, &train_seqs, &val_seqs, &cfg.train, |p| {
        eprintln!(
            "iter {:>6}  train {:>10.5}  val {:>10.5}  lr {:.2e}",
            p.iter, p.train_loss, p.val_loss, p.lr
        );
    })
    .map_err(data_err)?;
    checkpoint::save(&outcome.best, &out.join("checkpoint")).map_err(data_err)?;
    write(&out, "loss.csv", curve_csv(&outcome.curve))?;
    let summary = serde_json::json!({
        "best_iter": outcome.best_iter,
        "best_val_loss": outcome.best_val_loss,
        "initial_train_loss": outcome.initial_train_loss,
        "final_train_loss": outcome.final_train_loss,
        "clipped_steps": outcome.clipped_steps,
        "n_params": outcome.best.n_params(),
    });
    write(&out, "train_summary.json", json(&summary))?;
    config::write_snapshot(&out, "train", &cfg)?;
    eprintln!("train: best val loss {:.5} at iter {}", outcome.best_val_loss, outcome.best_iter);
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Split to evaluate: train, val or test.
    #[arg(long)]
    split: Option<String>,
    /// Comma-separated horizons, e.g. next,0.5y,1y,2y,3y.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<String>>,
}

fn parse_horizons(v: &[String]) -> Result<Vec<Horizon>, CliError> {
    if v.is_empty() {
        return Err(CliError::Usage("--horizons is empty".into()));
    }
    v.iter()
        .map(|h| h.parse().map_err(|e: eval::EvalError| CliError::Usage(format!("--horizons: {e}"))))
        .collect()
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let mut cfg: config::EvaluateConfig = config::load(a.common.config.as_deref())?;
    cfg.checkpoint = a.checkpoint.or(cfg.checkpoint);
    cfg.data = a.data.or(cfg.data);
    cfg.split = a.split.unwrap_or(cfg.split);
    cfg.horizons = a.horizons.unwrap_or(cfg.horizons);
    cfg.seed = a.common.seed.unwrap_or(cfg.seed);
    cfg.out = a.common.out.or(cfg.out);
    let horizons = parse_horizons(&cfg.horizons)?;
    let ckpt = required(&cfg.checkpoint, "--checkpoint")?;
    let data = required(&cfg.data, "--data")?;
    let out = out_dir(&cfg.out)?;

    let state = load_checkpoint(&ckpt)?;
    let vocab = load_vocab(&data)?;
    let seqs = load_split(&data, &cfg.split)?;
    let baseline = demographic_baseline(&load_split(&data, "train")?, vocab.n_predictable());
    let opts = EvalOptions {
        seed: cfg.seed,
        min_cases_per_stratum: cfg.min_cases_per_stratum,
        min_strata: cfg.min_strata,
        classes: None,
    };
    let rep = eval::evaluate(&ModelScorer { state: &state }, &baseline, &seqs, &vocab, &horizons, &opts)
        .map_err(data_err)?;
    write(&out, "report.csv", eval::report_csv(&rep))?;
    write(&out, "strata.csv", eval::strata_csv(&rep))?;
    let summary = eval::summarize(&rep);
    write(&out, "summary.csv", csv_of(&summary)?)?;
    config::write_snapshot(&out, "evaluate", &cfg)?;
    for s in &summary {
        eprintln!(
            "evaluate: {:<10} {} diseases, median AUC {:.3} vs baseline {:.3}",
            s.horizon, s.n_diseases, s.median_auc_model, s.median_auc_baseline
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// prospective / calibrate

#[derive(Debug, Args)]
pub struct CutoffArgs {
    /// CSV with patient_id,cutoff_age_days; drawn per patient when omitted.
    #[arg(long)]
    cutoffs: Option<PathBuf>,
}

fn resolve_cutoffs(c: &config::CutoffSection, seqs: &[TokenSequence], seed: u64) -> Result<CutoffMap, CliError> {
    match &c.file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            eval::parse_cutoffs_csv(&text, &p.display().to_string()).map_err(data_err)
        }
        None => Ok(eval::synthetic_cutoffs(
            seqs.iter().map(|s| s.patient_id.as_str()),
            derive_seed(seed, "cutoffs"),
            c.min_years,
            c.max_years,
        )),
    }
}

#[derive(Debug, Args)]
pub struct ProspectiveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    cut: CutoffArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    gap_days: Option<f64>,
    #[arg(long)]
    window_days: Option<f64>,
    /// Minimum total cases per disease.
    #[arg(long)]
    min_cases: Option<usize>,
}

pub fn prospective(a: ProspectiveArgs) -> Result<(), CliError> {
    let mut cfg: config::ProspectiveConfig = config::load(a.common.config.as_deref())?;
    cfg.checkpoint = a.checkpoint.or(cfg.checkpoint);
    cfg.data = a.data.or(cfg.data);
    cfg.split = a.split.unwrap_or(cfg.split);
    cfg.cutoffs.file = a.cut.cutoffs.or(cfg.cutoffs.file);
    cfg.gap_days = a.gap_days.unwrap_or(cfg.gap_days);
    cfg.window_days = a.window_days.unwrap_or(cfg.window_days);
    cfg.min_cases = a.min_cases.unwrap_or(cfg.min_cases);
    cfg.seed = a.common.seed.unwrap_or(cfg.seed);
    cfg.out = a.common.out.or(cfg.out);
    if !(cfg.gap_days >= 0.0 && cfg.window_days > 0.0) {
        return Err(CliError::Usage("--gap-days must be >= 0 and --window-days > 0".into()));
    }
    let ckpt = required(&cfg.checkpoint, "--checkpoint")?;
    let data = required(&cfg.data, "--data")?;
    let out = out_dir(&cfg.out)?;

    let state = load_checkpoint(&ckpt)?;
    let vocab = load_vocab(&data)?;
    let seqs = load_split(&data, &cfg.split)?;
    let baseline = demographic_baseline(&load_split(&data, "train")?, vocab.n_predictable());
    let cutoffs = resolve_cutoffs(&cfg.cutoffs, &seqs, cfg.seed)?;
    let opts = ProspectiveOptions {
        gap_days: cfg.gap_days,
        window_days: cfg.window_days,
        min_cases: cfg.min_cases,
        min_cases_per_stratum: cfg.min_cases_per_stratum,
        min_strata: cfg.min_strata,
        classes: None,
    };
    let rep = eval::prospective_eval(&ModelScorer { state: &state }, &baseline, &seqs, &vocab, &cutoffs, &opts)
        .map_err(data_err)?;
    write(&out, "prospective.csv", eval::report_csv(&rep))?;
    write(&out, "prospective_strata.csv", eval::strata_csv(&rep))?;
    config::write_snapshot(&out, "prospective", &cfg)?;
    eprintln!("prospective: {} diseases with at least {} cases", rep.rows.len(), cfg.min_cases);
    Ok(())
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    cut: CutoffArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    window_days: Option<f64>,
    #[arg(long)]
    n_bins: Option<usize>,
    /// Compare against outcomes simulated from the model itself.
    #[arg(long)]
    sample_from_model: bool,
}

pub fn calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let mut cfg: config::CalibrateConfig = config::load(a.common.config.as_deref())?;
    cfg.checkpoint = a.checkpoint.or(cfg.checkpoint);
    cfg.data = a.data.or(cfg.data);
    cfg.split = a.split.unwrap_or(cfg.split);
    cfg.cutoffs.file = a.cut.cutoffs.or(cfg.cutoffs.file);
    cfg.window_days = a.window_days.unwrap_or(cfg.window_days);
    cfg.n_bins = a.n_bins.unwrap_or(cfg.n_bins);
    cfg.sample_from_model |= a.sample_from_model;
    cfg.seed = a.common.seed.unwrap_or(cfg.seed);
    cfg.out = a.common.out.or(cfg.out);
    if !(cfg.window_days > 0.0) || cfg.n_bins == 0 {
        return Err(CliError::Usage("--window-days and --n-bins must be positive".into()));
    }
    let ckpt = required(&cfg.checkpoint, "--checkpoint")?;
    let data = required(&cfg.data, "--data")?;
    let out = out_dir(&cfg.out)?;

    let state = load_checkpoint(&ckpt)?;
    let vocab = load_vocab(&data)?;
    let seqs = load_split(&data, &cfg.split)?;
    let cutoffs = resolve_cutoffs(&cfg.cutoffs, &seqs, cfg.seed)?;
    let scorer = ModelScorer { state: &state };
    let mut preds = eval::risk_predictions(&scorer, &seqs, &vocab, &cutoffs, cfg.window_days).map_err(data_err)?;
    if cfg.sample_from_model {
        preds = eval::sample_outcomes(&state, &seqs, &cutoffs, &preds, cfg.window_days, derive_seed(cfg.seed, "outcomes"))
            .map_err(data_err)?;
    }
    let points = eval::calibration(&preds, &vocab);
    let bins = eval::calibration_bins(&preds, &vocab, cfg.n_bins);
    let slope = eval::log_log_slope(&points, cfg.min_events);
    write(&out, "calibration.csv", eval::calibration_csv(&points))?;
    write(&out, "calibration_bins.csv", eval::calibration_bins_csv(&bins))?;
    let summary = serde_json::json!({
        "log_log_slope": slope,
        "min_events": cfg.min_events,
        "diseases_used": points.iter().filter(|p| p.n_events >= cfg.min_events && p.observed_incidence > 0.0).count(),
        "degenerate_points": points.iter().filter(|p| p.degenerate).count(),
    });
    write(&out, "calibration_summary.json", json(&summary))?;
    config::write_snapshot(&out, "calibrate", &cfg)?;
    match slope {
        Some(s) => eprintln!("calibrate: log-log slope {s:.3} over diseases with >= {} events", cfg.min_events),
        None => eprintln!("calibrate: fewer than two diseases with >= {} events", cfg.min_events),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// report.csv from evaluate or prospective.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Matching strata CSV; needed for sex and age grouping.
    #[arg(long)]
    strata: Option<PathBuf>,
    /// icd_chapter, sex or age_group.
    #[arg(long)]
    grouping: Option<String>,
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let mut cfg: config::ReportConfig = config::load(a.common.config.as_deref())?;
    cfg.report = a.report.or(cfg.report);
    cfg.strata = a.strata.or(cfg.strata);
    cfg.grouping = a.grouping.unwrap_or(cfg.grouping);
    cfg.out = a.common.out.or(cfg.out);
    let grouping: Grouping = cfg
        .grouping
        .parse()
        .map_err(|e: eval::EvalError| CliError::Usage(format!("--grouping: {e}")))?;
    let report_path = required(&cfg.report, "--report")?;
    if grouping != Grouping::IcdChapter && cfg.strata.is_none() {
        return Err(CliError::Usage(format!("--grouping {grouping} needs --strata")));
    }
    let out = out_dir(&cfg.out)?;
    let rep = eval::read_report_csv(&report_path, cfg.strata.as_deref()).map_err(data_err)?;
    let rows = eval::group_report(&rep, grouping);
    write(&out, "grouped.csv", eval::grouped_csv(&rows))?;
    write(&out, "long.csv", eval::long_format_csv(&rep))?;
    write(&out, "summary.csv", csv_of(&eval::summarize(&rep))?)?;
    config::write_snapshot(&out, "report", &cfg)?;
    eprintln!("report: {} grouped rows by {grouping}", rows.len());
    Ok(())
}
