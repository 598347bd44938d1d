use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::config::ConfigEcho;
use crate::neg_nsd::TrainReport;
use crate::nsc::CorrectionRecord;
use crate::pos_nsd::ClassSummary;

/// Sizes of the sets produced along the pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetCounts {
    /// Annotated positives, T⁺.
    pub positives: usize,
    /// Un-annotated negatives, T⁻.
    pub negatives: usize,
    pub negatives_noisy: usize,
    pub negatives_clean: usize,
    /// Composed positives, T̃⁺.
    pub composed: usize,
    pub composed_noisy: usize,
    pub composed_clean: usize,
    /// Flagged positives after correction (relabelled or kept).
    pub noisy_to_clean: usize,
    pub relabelled: usize,
    pub output: usize,
}

impl SetCounts {
    /// Checks the set-algebra identities; returns the first violated one.
    pub fn check(&self) -> Result<(), String> {
        let rules = [
            (
                self.composed == self.positives + self.negatives_noisy,
                "|T~+| = |T+| + |T-_noisy|",
            ),
            (
                self.negatives == self.negatives_noisy + self.negatives_clean,
                "|T-| = |T-_noisy| + |T-_clean|",
            ),
            (
                self.composed == self.composed_noisy + self.composed_clean,
                "|T~+| = |T~+_noisy| + |T~+_clean|",
            ),
            (
                self.noisy_to_clean == self.composed_noisy,
                "|T~+_noisy->clean| = |T~+_noisy|",
            ),
            (
                self.output == self.composed_clean + self.noisy_to_clean + self.negatives_clean,
                "output = |T~+_clean| + |T~+_noisy->clean| + |T-_clean|",
            ),
        ];
        match rules.iter().find(|(ok, _)| !ok) {
            Some((_, rule)) => Err(format!("set identity violated: {rule}")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedEntry {
    pub id: String,
    pub label: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub neg_nsd_ms: f64,
    pub pos_nsd_ms: f64,
    pub nsc_ms: f64,
}

impl StageTimings {
    pub(crate) fn ms(d: Duration) -> f64 {
        d.as_secs_f64() * 1e3
    }
}

/// Provenance of one run: set sizes, what each stage touched, and the
/// configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub counts: SetCounts,
    pub config: ConfigEcho,
    pub training: Option<TrainReport>,
    /// Negatives turned into pseudo positives, in input order.
    pub mined: Vec<MinedEntry>,
    /// Positives flagged as noisy, in input order of the composed set.
    pub flagged: Vec<String>,
    #[serde(default)]
    pub classes: Vec<ClassSummary>,
    pub corrections: Vec<CorrectionRecord>,
    /// Wall-clock timings; kept out of the serialized report so that reruns
    /// are byte-identical.
    #[serde(skip)]
    pub timings: StageTimings,
}

impl fmt::Display for CleaningReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.counts;
        let s = &self.config.stages;
        let on = |b: bool| if b { "on" } else { "off" };
        writeln!(f, "stages: neg_nsd {} / pos_nsd {} / nsc {}", on(s.neg_nsd), on(s.pos_nsd), on(s.nsc))?;
        writeln!(f, "T+ (annotated positives)        {}", c.positives)?;
        writeln!(f, "T- (negatives)                  {}", c.negatives)?;
        writeln!(f, "  T-_noisy (mined)              {}", c.negatives_noisy)?;
        writeln!(f, "  T-_clean                      {}", c.negatives_clean)?;
        writeln!(f, "T~+ (composed positives)        {}", c.composed)?;
        writeln!(f, "  T~+_clean                     {}", c.composed_clean)?;
        writeln!(f, "  T~+_noisy (flagged)           {}", c.composed_noisy)?;
        writeln!(f, "T~+_noisy->clean                {} ({} relabelled)", c.noisy_to_clean, c.relabelled)?;
        writeln!(f, "output records                  {}", c.output)?;
        if let Some(t) = &self.training {
            writeln!(f, "neg_nsd training loss           {:.6} -> {:.6} over {} epochs",
                t.initial_loss, t.final_loss(), t.epoch_losses.len())?;
        }
        if !self.classes.is_empty() {
            writeln!(f, "per-class density analysis:")?;
            writeln!(f, "  class  part  size  alpha   cutoff        flagged")?;
            for cl in &self.classes {
                let cutoff = cl.cutoff.map_or_else(|| "skipped".to_owned(), |v| format!("{v:.6}"));
                writeln!(f, "  {:>5}  {:<4}  {:>4}  {:>5.1}   {:<12}  {}", cl.class, cl.part, cl.size, cl.alpha, cutoff, cl.flagged)?;
            }
        }
        Ok(())
    }
}
