use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::{GroundTruth, NoiseTag};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::pipeline::CleaningReport;

/// Detection and correction quality against the planted noise. Ratios with
/// an empty denominator are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub records: usize,
    pub missing: usize,
    pub mined: usize,
    pub mined_missing: usize,
    pub neg_recall: Option<f64>,
    pub neg_precision: Option<f64>,
    pub pseudo_label_accuracy: Option<f64>,
    pub noisy_positives: usize,
    pub flagged: usize,
    pub flagged_noisy: usize,
    pub pos_recall: Option<f64>,
    pub pos_precision: Option<f64>,
    pub pos_false_positive_rate: Option<f64>,
    pub changed: usize,
    pub changed_correct: usize,
    pub correction_accuracy: Option<f64>,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn check_ids(dataset: &Dataset, truth: &GroundTruth, what: &str) -> Result<()> {
    if dataset.len() != truth.len() {
        return Err(Error::IdMismatch(format!(
            "{what} has {} records, truth has {}",
            dataset.len(),
            truth.len()
        )));
    }
    if let Some(r) = dataset.records.iter().find(|r| truth.get(&r.id).is_none()) {
        return Err(Error::IdMismatch(format!("{what} record {:?} missing from truth", r.id)));
    }
    Ok(())
}

fn label_accuracy(dataset: &Dataset, truth: &GroundTruth) -> f64 {
    let correct = dataset
        .records
        .iter()
        .filter(|r| truth.get(&r.id).is_some_and(|t| t.label == r.label))
        .count();
    correct as f64 / dataset.len() as f64
}

/// Scores one pipeline run. `original` is the dataset fed into the pipeline,
/// `cleaned` its output.
pub fn score(
    original: &Dataset,
    cleaned: &Dataset,
    report: &CleaningReport,
    truth: &GroundTruth,
) -> Result<Metrics> {
    check_ids(original, truth, "input")?;
    check_ids(cleaned, truth, "cleaned output")?;
    let tag = |id: &str| truth.get(id).map(|t| t.tag);

    let missing = truth.count(NoiseTag::Missing);
    let mut mined_missing = 0;
    let mut pseudo_correct = 0;
    for m in &report.mined {
        let t = truth
            .get(&m.id)
            .ok_or_else(|| Error::IdMismatch(format!("mined id {:?} not in truth", m.id)))?;
        if t.tag == NoiseTag::Missing {
            mined_missing += 1;
            if t.label == Some(m.label) {
                pseudo_correct += 1;
            }
        }
    }

    let noisy_positives = truth.count(NoiseTag::Common) + truth.count(NoiseTag::Synonym);
    let positive_ids: HashSet<&str> = original
        .records
        .iter()
        .filter(|r| r.is_positive())
        .map(|r| r.id.as_str())
        .collect();
    let clean_positives = positive_ids
        .iter()
        .filter(|id| tag(id) == Some(NoiseTag::None))
        .count();
    let flagged: HashSet<&str> = report.flagged.iter().map(String::as_str).collect();
    let mut flagged_noisy = 0;
    let mut flagged_clean_positive = 0;
    for id in &flagged {
        match tag(id) {
            Some(NoiseTag::Common | NoiseTag::Synonym) => flagged_noisy += 1,
            Some(NoiseTag::None) if positive_ids.contains(id) => flagged_clean_positive += 1,
            Some(NoiseTag::None | NoiseTag::Missing) => {}
            None => return Err(Error::IdMismatch(format!("flagged id {id:?} not in truth"))),
        }
    }

    let mut changed = 0;
    let mut changed_correct = 0;
    for c in report.corrections.iter().filter(|c| c.changed) {
        changed += 1;
        if truth.get(&c.id).and_then(|t| t.label) == Some(c.new_label) {
            changed_correct += 1;
        }
    }

    Ok(Metrics {
        records: original.len(),
        missing,
        mined: report.mined.len(),
        mined_missing,
        neg_recall: ratio(mined_missing, missing),
        neg_precision: ratio(mined_missing, report.mined.len()),
        pseudo_label_accuracy: ratio(pseudo_correct, mined_missing),
        noisy_positives,
        flagged: flagged.len(),
        flagged_noisy,
        pos_recall: ratio(flagged_noisy, noisy_positives),
        pos_precision: ratio(flagged_noisy, flagged.len()),
        pos_false_positive_rate: ratio(flagged_clean_positive, clean_positives),
        changed,
        changed_correct,
        correction_accuracy: ratio(changed_correct, changed),
        accuracy_before: label_accuracy(original, truth),
        accuracy_after: label_accuracy(cleaned, truth),
    })
}

struct Opt(Option<f64>);

impl fmt::Display for Opt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.4}"),
            None => f.write_str("n/a"),
        }
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records                 {}", self.records)?;
        writeln!(f, "negative detection      recall {} precision {} ({} of {} missing mined, {} mined)",
            Opt(self.neg_recall), Opt(self.neg_precision), self.mined_missing, self.missing, self.mined)?;
        writeln!(f, "pseudo-label accuracy   {}", Opt(self.pseudo_label_accuracy))?;
        writeln!(f, "positive detection      recall {} precision {} fpr {} ({} of {} noisy flagged, {} flagged)",
            Opt(self.pos_recall), Opt(self.pos_precision), Opt(self.pos_false_positive_rate),
            self.flagged_noisy, self.noisy_positives, self.flagged)?;
        writeln!(f, "correction accuracy     {} ({} of {} changed)",
            Opt(self.correction_accuracy), self.changed_correct, self.changed)?;
        writeln!(f, "label accuracy          before {:.4} after {:.4}", self.accuracy_before, self.accuracy_after)
    }
}
