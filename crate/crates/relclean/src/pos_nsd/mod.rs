//! Positive noisy-sample detection by per-class local density.
//!
//! Within each predicate class the squared distances between all members are
//! collected, a cutoff is taken at a tier-dependent percentile of that pool,
//! and each member's local density counts the members closer than the cutoff.
//! A 1-D k-means over the densities splits the class into subsets and the
//! lowest-density subset is flagged as noisy.

mod density;
mod kmeans;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use density::{
    cutoff_distance, distance_matrix, local_density, squared_euclidean, DistanceMatrix,
};
pub use kmeans::{split_subsets, SubsetSplit};

use crate::dataset::{FrequencyPartition, Part, PartMap, TripletRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosNsdConfig {
    /// Cutoff percentile per tier, in (0, 100].
    pub alpha: PartMap<f64>,
    pub n_subsets: usize,
    /// Classes with fewer members are never flagged.
    pub min_class_size: usize,
    /// Whether the zero self-distance takes part in the cutoff pool and in
    /// each sample's density count.
    pub include_self: bool,
}

impl Default for PosNsdConfig {
    fn default() -> Self {
        PosNsdConfig {
            alpha: PartMap {
                head: 12.5,
                body: 25.0,
                tail: 50.0,
            },
            n_subsets: 3,
            min_class_size: 5,
            include_self: true,
        }
    }
}

impl PosNsdConfig {
    pub fn validate(&self) -> Result<()> {
        for part in Part::ALL {
            let a = self.alpha.get(part);
            if !(a > 0.0 && a <= 100.0) {
                return Err(Error::InvalidConfig(format!(
                    "alpha for {part} is {a}, must lie in (0, 100]"
                )));
            }
        }
        if self.n_subsets < 2 {
            return Err(Error::InvalidConfig("n_subsets must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: usize,
    pub part: Part,
    pub alpha: f64,
    pub size: usize,
    /// `None` when the class was below `min_class_size`.
    pub cutoff: Option<f64>,
    /// `None` when no split was possible.
    pub noisy_subset: Option<usize>,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEntry {
    pub id: String,
    pub class: usize,
    pub rho: Option<u32>,
    pub d_c: Option<f64>,
    pub subset: Option<usize>,
    pub flagged: bool,
}

/// Per-class cutoffs and per-sample densities, in predicate-index order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DensityReport {
    pub classes: Vec<ClassSummary>,
    pub entries: Vec<DensityEntry>,
}

impl DensityReport {
    /// One JSON object per sample: `{id, class, rho, d_c, subset, flagged}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct PosDetection {
    /// Flagged ids, in input order.
    pub noisy: Vec<String>,
    /// Remaining ids, in input order.
    pub clean: Vec<String>,
    pub report: DensityReport,
}

struct ClassOutcome {
    summary: ClassSummary,
    entries: Vec<DensityEntry>,
}

fn analyse_class(
    class: usize,
    members: &[&TripletRecord],
    config: &PosNsdConfig,
    partition: &FrequencyPartition,
) -> Result<ClassOutcome> {
    let part = partition.part_of(class);
    let alpha = config.alpha.get(part);
    let mut summary = ClassSummary {
        class,
        part,
        alpha,
        size: members.len(),
        cutoff: None,
        noisy_subset: None,
        flagged: 0,
    };
    if members.len() < config.min_class_size {
        let entries = members
            .iter()
            .map(|r| DensityEntry {
                id: r.id.clone(),
                class,
                rho: None,
                d_c: None,
                subset: None,
                flagged: false,
            })
            .collect();
        return Ok(ClassOutcome { summary, entries });
    }

    let features: Vec<&[f64]> = members.iter().map(|r| r.feature.as_slice()).collect();
    let matrix = distance_matrix(class, &features)?;
    let cutoff = cutoff_distance(&matrix, alpha, config.include_self)?;
    let rho = local_density(&matrix, cutoff, config.include_self);
    let split = split_subsets(&rho, config.n_subsets);
    summary.cutoff = Some(cutoff);
    summary.noisy_subset = split.as_ref().map(|s| s.noisy_subset);

    let entries: Vec<DensityEntry> = members
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let subset = split.as_ref().map(|s| s.assignments[i]);
            DensityEntry {
                id: r.id.clone(),
                class,
                rho: Some(rho[i]),
                d_c: Some(cutoff),
                subset,
                flagged: subset.is_some() && subset == summary.noisy_subset,
            }
        })
        .collect();
    summary.flagged = entries.iter().filter(|e| e.flagged).count();
    Ok(ClassOutcome { summary, entries })
}

/// Splits the composed positive set into noisy and clean ids.
pub fn detect_positives(
    t_plus: &[TripletRecord],
    config: &PosNsdConfig,
    partition: &FrequencyPartition,
) -> Result<PosDetection> {
    config.validate()?;
    let n_classes = partition.parts().len();
    let mut groups: Vec<Vec<&TripletRecord>> = vec![Vec::new(); n_classes];
    for r in t_plus {
        let label = r
            .label
            .ok_or_else(|| Error::Precondition(format!("record {:?} has no label", r.id)))?;
        groups
            .get_mut(label)
            .ok_or_else(|| {
                Error::Precondition(format!(
                    "record {:?}: label {label} outside {n_classes} classes",
                    r.id
                ))
            })?
            .push(r);
    }

    let outcomes: Vec<ClassOutcome> = groups
        .par_iter()
        .enumerate()
        .filter(|(_, members)| !members.is_empty())
        .map(|(class, members)| analyse_class(class, members, config, partition))
        .collect::<Result<_>>()?;

    let mut report = DensityReport::default();
    let mut flagged = std::collections::HashSet::new();
    for o in outcomes {
        for e in &o.entries {
            if e.flagged {
                flagged.insert(e.id.clone());
            }
        }
        report.classes.push(o.summary);
        report.entries.extend(o.entries);
    }
    let (noisy, clean): (Vec<String>, Vec<String>) = t_plus
        .iter()
        .map(|r| r.id.clone())
        .partition(|id| flagged.contains(id));
    Ok(PosDetection {
        noisy,
        clean,
        report,
    })
}
