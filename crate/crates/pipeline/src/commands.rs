//! The subcommands behind the `gaitrt` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gaitrt_core::features::{
    build_samples, predict_rows, prepare_dataset, run_protocol, ChainModels, ModelName, ProtocolResult,
    TrainedModel,
};
use gaitrt_core::gait::Foot;
use gaitrt_core::metrics::compute_report;
use gaitrt_core::synth::{generate_cohort, read_dataset, write_dataset, Dataset, SyntheticTrial};
use log::info;

use crate::compare::{compare_to_reference, read_rt_logs, read_strikes, ComparisonReport, PredictionLog};
use crate::config::Config;
use crate::driver::{self, write_json, SessionOutcome};
use crate::dump::{read_dump, write_dump};
use crate::error::{PipelineError, Result};
use crate::session::session_records;

/// File name of a stage model inside a model directory.
pub fn model_file(name: ModelName) -> String {
    format!("{name}.model")
}

/// Loads the GRF, W4 and 5-joint moment models from `dir`.
pub fn load_chain_models(dir: &Path) -> Result<ChainModels> {
    let load = |name: ModelName| -> Result<_> {
        let path = dir.join(model_file(name));
        let m = TrainedModel::load(&path)?;
        let found = m.config_name()?;
        if found != name {
            return Err(PipelineError::Config(format!(
                "{} holds a {found} model, expected {name}",
                path.display()
            )));
        }
        Ok(m.into_predictor())
    };
    Ok(ChainModels {
        grf: load(ModelName::Grf)?,
        angles: load(ModelName::W4)?,
        moments: load(ModelName::M5Joint)?,
    })
}

pub fn generate(config: &Config, seed: u64, out: &Path) -> Result<Dataset> {
    let cohort = generate_cohort(&config.cohort.cohort_config(), seed)?;
    write_dataset(&cohort.dataset, out)?;
    info!(
        "wrote {} trials of {} subjects to {}",
        cohort.dataset.trials.len(),
        cohort.dataset.subjects.len(),
        out.display()
    );
    Ok(cohort.dataset)
}

/// Per-fold and aggregate metrics of a protocol run, one line per output.
pub fn format_protocol(result: &ProtocolResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {} {:?}", result.config, result.mode);
    for fold in &result.folds {
        for (name, r) in result.outputs.iter().zip(&fold.reports) {
            let _ = writeln!(s, "fold={} output={name} {}", fold.label, r.to_kv());
        }
    }
    for (name, a) in result.outputs.iter().zip(&result.aggregate) {
        let f = |m: Option<gaitrt_core::metrics::MeanStd>| m.map_or("nan".to_string(), |m| m.to_string());
        let _ = writeln!(
            s,
            "aggregate output={name} rmse={} nrmse={} r={}",
            a.rmse,
            f(a.nrmse),
            f(a.pearson_r)
        );
    }
    s
}

pub struct TrainOutcome {
    pub model: TrainedModel,
    pub protocol: Option<ProtocolResult>,
}

/// Cross-validates (unless switched off) and fits the final model on every
/// sample of `dataset`.
pub fn train(config: &Config, seed: u64, dataset: &Dataset) -> Result<TrainOutcome> {
    let mc = config.training.model_config()?;
    let trainer = config.training.trainer(&mc);
    let prepared = prepare_dataset(dataset, &config.realtime.preprocessing())?;
    let samples = build_samples(&mc, &prepared, &config.training.sampling())?;
    info!("{}: {} samples over {} cycles", mc.name, samples.len(), samples.n_cycles());
    let protocol = match config.training.protocol(&mc, seed) {
        Some(p) => Some(run_protocol(&p, &samples, &trainer)?),
        None => None,
    };
    let rows: Vec<usize> = (0..samples.len()).collect();
    let model = trainer.train(&samples, &rows, seed)?;
    Ok(TrainOutcome { model, protocol })
}

pub fn train_command(config: &Config, seed: u64, dataset: &Path, model: &Path, out: Option<&Path>) -> Result<String> {
    let data = read_dataset(dataset)?;
    let t = train(config, seed, &data)?;
    t.model.save(model)?;
    let text = t.protocol.as_ref().map(format_protocol).unwrap_or_default();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        if let Some(p) = &t.protocol {
            write_json(&dir.join("protocol.json"), p)?;
            std::fs::write(dir.join("protocol.txt"), &text).map_err(|e| PipelineError::io(dir, e))?;
        }
    }
    Ok(text)
}

/// With a model: its error on every sample of the dataset. Without: the
/// configured cross-validation protocol.
pub fn eval_command(config: &Config, seed: u64, dataset: &Path, model: Option<&Path>) -> Result<String> {
    let data = read_dataset(dataset)?;
    let prepared = prepare_dataset(&data, &config.realtime.preprocessing())?;
    match model {
        Some(path) => {
            let m = TrainedModel::load(path)?;
            let mc = m.config()?;
            let samples = build_samples(&mc, &prepared, &config.training.sampling())?;
            let rows: Vec<usize> = (0..samples.len()).collect();
            let pred = predict_rows(&m, &samples, &rows)?;
            let mut s = format!("# {} on {} samples\n", mc.name, samples.len());
            for (o, name) in mc.output_names(Foot::Right).iter().enumerate() {
                let r = compute_report(&samples.y.column(o), &pred.column(o))?;
                let _ = writeln!(s, "output={name} {}", r.to_kv());
            }
            Ok(s)
        }
        None => {
            let mc = config.training.model_config()?;
            let samples = build_samples(&mc, &prepared, &config.training.sampling())?;
            let protocol = config
                .training
                .protocol(&mc, seed)
                .ok_or_else(|| PipelineError::Config("eval without --model needs a protocol".into()))?;
            let r = run_protocol(&protocol, &samples, &config.training.trainer(&mc))?;
            Ok(format_protocol(&r))
        }
    }
}

fn find_trial<'a>(data: &'a Dataset, subject: &str, trial: &str) -> Result<&'a SyntheticTrial> {
    data.trials
        .iter()
        .find(|t| t.subject_id == subject && t.trial_id == trial)
        .ok_or_else(|| PipelineError::Config(format!("dataset has no trial {subject}/{trial}")))
}

/// Packet stream of the configured session trial, written as a dump.
pub fn synth_dump_command(config: &Config, dataset: &Path, out: &Path) -> Result<usize> {
    let data = read_dataset(dataset)?;
    let trial = find_trial(&data, &config.session.subject, &config.session.trial)?;
    let records = session_records(trial, &config.session)?;
    write_dump(out, &records)?;
    Ok(records.len())
}

pub fn replay_command(
    config: &Config,
    dump: &Path,
    models: &Path,
    out: &Path,
    as_fast_as_possible: bool,
) -> Result<SessionOutcome> {
    let records = read_dump(dump)?;
    let models = load_chain_models(models)?;
    driver::replay(records, models, &config.realtime, out, as_fast_as_possible)
}

pub fn run_command(config: &Config, listen: &str, models: &Path, out: &Path) -> Result<SessionOutcome> {
    let models = load_chain_models(models)?;
    driver::run_live(listen, models, &config.realtime, out)
}

/// Compares the session logs in `logs` with every trial of the configured
/// subject, segmenting the logs on their detected strikes.
pub fn report_command(config: &Config, logs: &Path, dataset: &Path, out: Option<&Path>) -> Result<ComparisonReport> {
    let data = read_dataset(dataset)?;
    let reference: Vec<SyntheticTrial> = data
        .trials
        .into_iter()
        .filter(|t| t.subject_id == config.session.subject)
        .collect();
    let rt = read_rt_logs(logs, PredictionLog::Filtered)?;
    let strikes = read_strikes(logs)?;
    let report = compare_to_reference(&rt, &strikes, &reference)?;
    let dir: PathBuf = out.unwrap_or(logs).to_path_buf();
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    let table = dir.join("comparison.csv");
    std::fs::write(&table, report.table_csv()).map_err(|e| PipelineError::io(&table, e))?;
    let profiles = dir.join("profiles.csv");
    std::fs::write(&profiles, report.profiles_csv()).map_err(|e| PipelineError::io(&profiles, e))?;
    Ok(report)
}
