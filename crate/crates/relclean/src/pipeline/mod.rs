//! End-to-end cleaning: negative detection, composition of the positive set,
//! positive detection and correction, followed by reporting and atomic
//! output.

mod config;
mod report;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{ConfigEcho, IoConfig, PartitionConfig, PipelineConfig, StageToggles};
pub use report::{CleaningReport, MinedEntry, SetCounts, StageTimings};

use crate::dataset::{self, Dataset, LabelState, LoadOptions, TripletRecord};
use crate::error::{Error, Result};
use crate::neg_nsd::{self, ConfidenceModel};
use crate::nsc;
use crate::pos_nsd::{self, DensityReport};

/// Everything a run produces, before anything is written.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub cleaned: Dataset,
    pub report: CleaningReport,
    pub model: Option<ConfidenceModel>,
    pub density: Option<DensityReport>,
}

fn check_input(dataset: &Dataset) -> Result<()> {
    if let Some(r) = dataset
        .records
        .iter()
        .find(|r| !matches!(r.state, LabelState::Annotated | LabelState::Negative))
    {
        return Err(Error::Precondition(format!(
            "input record {:?} is {}; pipeline input must be annotated or negative",
            r.id, r.state
        )));
    }
    Ok(())
}

/// Runs the enabled stages on an in-memory dataset.
pub fn run_dataset(dataset: &Dataset, config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    check_input(dataset)?;
    let stages = config.stages;
    let mut timings = StageTimings::default();

    let positives = dataset.positives();
    let negatives = dataset.negatives();

    // negative detection
    let started = Instant::now();
    let neg_cfg = config.effective_neg_nsd();
    let (mined, clean_negatives, model, training) = if stages.neg_nsd && !negatives.is_empty() {
        let (model, training) = neg_nsd::train(&positives, dataset.vocab.len(), &neg_cfg)
            .map_err(|e| e.in_stage("neg_nsd"))?;
        let det = neg_nsd::detect_negatives(&model, &negatives, &neg_cfg, &dataset.partition)
            .map_err(|e| e.in_stage("neg_nsd"))?;
        (det.noisy, det.clean, Some(model), Some(training))
    } else {
        (Vec::new(), negatives, None, None)
    };
    timings.neg_nsd_ms = StageTimings::ms(started.elapsed());

    let composed = dataset::compose_positive_set(&positives, &mined)
        .map_err(|e| e.in_stage("compose"))?;

    // positive detection
    let started = Instant::now();
    let (flagged, clean_ids, density) = if stages.pos_nsd {
        let det = pos_nsd::detect_positives(&composed, &config.pos_nsd, &dataset.partition)
            .map_err(|e| e.in_stage("pos_nsd"))?;
        (det.noisy, det.clean, Some(det.report))
    } else {
        (Vec::new(), composed.iter().map(|r| r.id.clone()).collect(), None)
    };
    timings.pos_nsd_ms = StageTimings::ms(started.elapsed());

    // Working set in input order: composed positives plus clean negatives.
    let mut updated: HashMap<&str, &TripletRecord> = HashMap::new();
    for r in composed.iter().chain(&clean_negatives) {
        updated.insert(r.id.as_str(), r);
    }
    let mut records: Vec<TripletRecord> = dataset
        .records
        .iter()
        .map(|r| updated[r.id.as_str()].clone())
        .collect();
    if let Some(report) = &density {
        let rho: HashMap<&str, Option<u32>> =
            report.entries.iter().map(|e| (e.id.as_str(), e.rho)).collect();
        for r in &mut records {
            if let Some(&value) = rho.get(r.id.as_str()) {
                r.density = value;
            }
        }
    }
    let working = dataset.with_records(records);

    let started = Instant::now();
    let (cleaned, corrections) = if stages.nsc {
        nsc::correct(&flagged, &working, &clean_ids, &config.nsc)
            .map_err(|e| e.in_stage("nsc"))?
    } else {
        let mut records = working.records.clone();
        let index = working.id_index();
        for id in &flagged {
            records[index[id.as_str()]].state = LabelState::CleanKept;
        }
        (working.with_records(records), Vec::new())
    };
    timings.nsc_ms = StageTimings::ms(started.elapsed());

    let counts = SetCounts {
        positives: positives.len(),
        negatives: dataset.negatives().len(),
        negatives_noisy: mined.len(),
        negatives_clean: clean_negatives.len(),
        composed: composed.len(),
        composed_noisy: flagged.len(),
        composed_clean: clean_ids.len(),
        noisy_to_clean: flagged.len(),
        relabelled: corrections.iter().filter(|c| c.changed).count(),
        output: cleaned.len(),
    };
    counts
        .check()
        .map_err(|m| Error::Precondition(m).in_stage("report"))?;

    let report = CleaningReport {
        counts,
        config: config.echo(),
        training,
        mined: mined
            .iter()
            .map(|r| MinedEntry {
                id: r.id.clone(),
                label: r.label.expect("mined records carry a pseudo label"),
                confidence: r.confidence.unwrap_or(0.0),
            })
            .collect(),
        flagged,
        classes: density.as_ref().map(|d| d.classes.clone()).unwrap_or_default(),
        corrections,
        timings,
    };
    Ok(PipelineOutput {
        cleaned,
        report,
        model,
        density,
    })
}

/// Output file names inside the output directory.
pub const CLEANED_FILE: &str = "cleaned.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const DENSITY_FILE: &str = "density.jsonl";
pub const CORRECTIONS_FILE: &str = "corrections.jsonl";
pub const MODEL_FILE: &str = "model.txt";
pub const TIMINGS_FILE: &str = "timings.json";

impl PipelineOutput {
    /// Serialized output files, name and contents.
    pub fn files(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        let mut files = Vec::new();
        files.push((CLEANED_FILE, self.cleaned.to_jsonl().into_bytes()));
        let mut json = serde_json::to_vec_pretty(&self.report).expect("report serializes");
        json.push(b'\n');
        files.push((REPORT_JSON, json));
        files.push((REPORT_TEXT, self.report.to_string().into_bytes()));
        if let Some(density) = &self.density {
            let mut buf = Vec::new();
            density.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
            files.push((DENSITY_FILE, buf));
        }
        if self.report.config.stages.nsc {
            let mut buf = Vec::new();
            nsc::write_ledger(&self.report.corrections, &mut buf)
                .expect("writing to a Vec cannot fail");
            files.push((CORRECTIONS_FILE, buf));
        }
        if let Some(model) = &self.model {
            files.push((MODEL_FILE, model.to_text().into_bytes()));
        }
        let mut timings = serde_json::to_vec_pretty(&self.report.timings).expect("serializes");
        timings.push(b'\n');
        files.push((TIMINGS_FILE, timings));
        Ok(files)
    }
}

/// Writes every file to a temporary name first and renames once all writes
/// succeeded.
pub fn write_atomically(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let target = dir.join(name);
        let tmp = dir.join(format!(".{name}.tmp"));
        if let Err(e) = std::fs::write(&tmp, bytes) {
            for (t, _) in &staged {
                let _ = std::fs::remove_file(t);
            }
            let _ = std::fs::remove_file(&tmp);
            return Err(Error::io(&tmp, e));
        }
        staged.push((tmp, target));
    }
    for (tmp, target) in &staged {
        std::fs::rename(tmp, target).map_err(|e| Error::io(target, e))?;
    }
    Ok(())
}

/// Loads the configured input, runs the pipeline and writes all outputs.
pub fn run(config: &PipelineConfig) -> Result<PipelineOutput> {
    let input = config
        .io
        .input
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("no input dataset configured".into()))?;
    let out_dir = config
        .io
        .out_dir
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("no output directory configured".into()))?;
    let options = load_options(config)?;
    let dataset = dataset::load_dataset(input, &options)?;
    let output = run_dataset(&dataset, config)?;
    write_atomically(out_dir, &output.files()?)?;
    Ok(output)
}

pub fn load_options(config: &PipelineConfig) -> Result<LoadOptions> {
    Ok(LoadOptions {
        vocab: config.io.vocab.as_deref().map(dataset::load_vocab).transpose()?,
        head_min: config.partition.head_min,
        tail_max: config.partition.tail_max,
    })
}
