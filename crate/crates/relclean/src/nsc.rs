//! Noisy-sample correction by a distance-weighted k-nearest-neighbour vote
//! among clean samples that share the query's subject and object classes.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabelState, TripletRecord};
use crate::error::{Error, Result};
use crate::pos_nsd::squared_euclidean;

const MIN_KERNEL_WIDTH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NscConfig {
    pub k: usize,
    /// Kernel weight is `a * exp(-(d - b)^2 / (2 c^2))`.
    pub a: f64,
    pub b: f64,
    /// Fixed kernel width; when absent the median pairwise distance of the
    /// candidate pool is used.
    pub c: Option<f64>,
    pub min_neighbors: usize,
}

impl Default for NscConfig {
    fn default() -> Self {
        NscConfig {
            k: 3,
            a: 1.0,
            b: 0.0,
            c: None,
            min_neighbors: 1,
        }
    }
}

impl NscConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.a > 0.0) || !self.a.is_finite() {
            return Err(Error::InvalidConfig(format!("kernel a = {} must be > 0", self.a)));
        }
        if !self.b.is_finite() {
            return Err(Error::InvalidConfig("kernel b must be finite".into()));
        }
        if let Some(c) = self.c {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::InvalidConfig(format!("kernel c = {c} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn weight(&self, distance: f64, width: f64) -> f64 {
        let z = distance - self.b;
        self.a * (-(z * z) / (2.0 * width * width)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRecord {
    pub id: String,
    pub old_label: usize,
    pub new_label: usize,
    pub changed: bool,
    pub neighbor_ids: Vec<String>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    pub label: usize,
    pub neighbor_ids: Vec<String>,
    pub distances: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Clean records with the same subject/object classes as `query`, excluding
/// the query itself.
pub fn candidate_pool<'a>(
    query: &TripletRecord,
    clean_set: &'a [TripletRecord],
) -> Vec<&'a TripletRecord> {
    clean_set
        .iter()
        .filter(|r| r.pair() == query.pair() && r.id != query.id)
        .collect()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// Median squared distance over all pairs inside the pool, floored at 1e-6.
/// A single-member pool has no pairs and yields `None`.
pub fn pool_width(pool: &[&TripletRecord]) -> Option<f64> {
    let mut d = Vec::with_capacity(pool.len() * pool.len().saturating_sub(1) / 2);
    for i in 0..pool.len() {
        for j in i + 1..pool.len() {
            d.push(squared_euclidean(&pool[i].feature, &pool[j].feature));
        }
    }
    median(d).map(|m| m.max(MIN_KERNEL_WIDTH))
}

/// Weighted vote among the `k` nearest pool members.
pub fn knn_vote(query: &[f64], pool: &[&TripletRecord], config: &NscConfig) -> Option<Vote> {
    let width = match config.c {
        Some(c) => Some(c),
        None => pool_width(pool),
    };
    vote_with_width(query, pool, config, width)
}

fn vote_with_width(
    query: &[f64],
    pool: &[&TripletRecord],
    config: &NscConfig,
    width: Option<f64>,
) -> Option<Vote> {
    if pool.is_empty() || pool.len() < config.min_neighbors {
        return None;
    }
    let mut ranked: Vec<(f64, usize)> = pool
        .iter()
        .enumerate()
        .map(|(i, r)| (squared_euclidean(query, &r.feature), i))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.truncate(config.k);

    let width = width.unwrap_or_else(|| {
        median(ranked.iter().map(|r| r.0).collect())
            .unwrap_or(0.0)
            .max(MIN_KERNEL_WIDTH)
    });

    // label -> (summed weight, summed distance)
    let mut tally: Vec<(usize, f64, f64)> = Vec::new();
    let mut neighbor_ids = Vec::with_capacity(ranked.len());
    let mut distances = Vec::with_capacity(ranked.len());
    let mut weights = Vec::with_capacity(ranked.len());
    for &(d, i) in &ranked {
        let r = pool[i];
        let label = r.label?;
        let w = config.weight(d, width);
        match tally.iter_mut().find(|t| t.0 == label) {
            Some(t) => {
                t.1 += w;
                t.2 += d;
            }
            None => tally.push((label, w, d)),
        }
        neighbor_ids.push(r.id.clone());
        distances.push(d);
        weights.push(w);
    }
    let best = tally.iter().copied().reduce(|best, t| {
        let better = t.1 > best.1
            || (t.1 == best.1 && (t.2 < best.2 || (t.2 == best.2 && t.0 < best.0)));
        if better {
            t
        } else {
            best
        }
    })?;
    Some(Vote {
        label: best.0,
        neighbor_ids,
        distances,
        weights,
    })
}

/// Relabels the records named in `noisy_ids` by voting among the records in
/// `clean_ids`. Vote pools are drawn from the dataset as given, so no
/// correction influences another within the same call.
pub fn correct(
    noisy_ids: &[String],
    dataset: &Dataset,
    clean_ids: &[String],
    config: &NscConfig,
) -> Result<(Dataset, Vec<CorrectionRecord>)> {
    config.validate()?;
    let index = dataset.id_index();
    let lookup = |id: &String| {
        index
            .get(id.as_str())
            .copied()
            .ok_or_else(|| Error::IdMismatch(format!("unknown record id {id:?}")))
    };
    let noisy_set: HashSet<&str> = noisy_ids.iter().map(String::as_str).collect();
    if let Some(id) = clean_ids.iter().find(|id| noisy_set.contains(id.as_str())) {
        return Err(Error::Precondition(format!("id {id:?} is both noisy and clean")));
    }
    let noisy_idx: Vec<usize> = noisy_ids.iter().map(lookup).collect::<Result<_>>()?;
    let clean_idx: Vec<usize> = clean_ids.iter().map(lookup).collect::<Result<_>>()?;

    let mut pools: HashMap<(u32, u32), Vec<&TripletRecord>> = HashMap::new();
    for &i in &clean_idx {
        let r = &dataset.records[i];
        if r.label.is_none() {
            return Err(Error::Precondition(format!("clean record {:?} has no label", r.id)));
        }
        pools.entry(r.pair()).or_default().push(r);
    }
    for &i in &noisy_idx {
        if dataset.records[i].label.is_none() {
            return Err(Error::Precondition(format!(
                "noisy record {:?} has no label",
                dataset.records[i].id
            )));
        }
    }
    let widths: HashMap<(u32, u32), Option<f64>> = pools
        .par_iter()
        .map(|(&pair, pool)| (pair, config.c.or_else(|| pool_width(pool))))
        .collect();

    let ledger: Vec<CorrectionRecord> = noisy_idx
        .par_iter()
        .map(|&i| {
            let r = &dataset.records[i];
            let old = r.label.expect("checked above");
            let vote = pools
                .get(&r.pair())
                .and_then(|pool| vote_with_width(&r.feature, pool, config, widths[&r.pair()]));
            match vote {
                Some(v) => CorrectionRecord {
                    id: r.id.clone(),
                    old_label: old,
                    new_label: v.label,
                    changed: v.label != old,
                    neighbor_ids: v.neighbor_ids,
                    weights: v.weights,
                },
                None => CorrectionRecord {
                    id: r.id.clone(),
                    old_label: old,
                    new_label: old,
                    changed: false,
                    neighbor_ids: Vec::new(),
                    weights: Vec::new(),
                },
            }
        })
        .collect();

    let mut records = dataset.records.clone();
    for (entry, &i) in ledger.iter().zip(&noisy_idx) {
        let r = &mut records[i];
        if entry.changed {
            r.label = Some(entry.new_label);
            r.state = LabelState::Corrected;
        } else {
            r.state = LabelState::CleanKept;
        }
    }
    Ok((dataset.with_records(records), ledger))
}

pub fn write_ledger<W: Write>(ledger: &[CorrectionRecord], mut out: W) -> std::io::Result<()> {
    for e in ledger {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
