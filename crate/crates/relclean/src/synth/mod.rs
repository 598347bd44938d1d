//! Synthetic triplet datasets with known ground truth.
//!
//! Every predicate class is an isotropic Gaussian around its own center.
//! After sampling, three kinds of annotation noise are planted with exact
//! counts: coarse-label substitution (`common`), swaps between synonymous
//! predicates (`synonym`) and demotion of annotated pairs to negatives
//! (`missing`). Optional background negatives are drawn far from every class
//! center.

mod metrics;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use metrics::{score, Metrics};

use crate::dataset::{
    Dataset, LabelState, PredicateVocab, TripletRecord, DEFAULT_HEAD_MIN, DEFAULT_TAIL_MAX,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_classes: usize,
    /// Number of distinct subject/object category pairs.
    pub n_pairs: usize,
    pub feature_dim: usize,
    /// Size of the most frequent class.
    pub max_per_class: usize,
    pub min_per_class: usize,
    /// Class `k` gets `max_per_class * (k + 1)^-imbalance` samples, floored at
    /// `min_per_class`.
    pub imbalance: f64,
    pub cluster_spread: f64,
    pub class_separation: f64,
    pub eta_common: f64,
    pub eta_syn: f64,
    pub eta_neg: f64,
    /// Unordered pairs of synonymous predicates.
    pub synonym_pairs: Vec<(usize, usize)>,
    /// `(fine, coarse)` edges; a fine predicate has at most one coarse parent.
    pub coarse_of: Vec<(usize, usize)>,
    /// True negatives placed at least `background_distance * cluster_spread`
    /// away from every class center.
    pub background_count: usize,
    pub background_distance: f64,
    pub image_size: usize,
    pub predicate_names: Option<Vec<String>>,
    pub head_min: u64,
    pub tail_max: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 10,
            n_pairs: 10,
            feature_dim: 16,
            max_per_class: 200,
            min_per_class: 20,
            imbalance: 0.0,
            cluster_spread: 1.0,
            class_separation: 6.0,
            eta_common: 0.0,
            eta_syn: 0.0,
            eta_neg: 0.0,
            synonym_pairs: Vec::new(),
            coarse_of: Vec::new(),
            background_count: 0,
            background_distance: 10.0,
            image_size: 8,
            predicate_names: None,
            head_min: DEFAULT_HEAD_MIN,
            tail_max: DEFAULT_TAIL_MAX,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_classes == 0 || self.n_pairs == 0 || self.feature_dim == 0 {
            return bad("n_classes, n_pairs and feature_dim must be positive".into());
        }
        if self.max_per_class == 0 || self.min_per_class > self.max_per_class {
            return bad("need 0 < max_per_class and min_per_class <= max_per_class".into());
        }
        if self.image_size == 0 {
            return bad("image_size must be positive".into());
        }
        for (name, eta) in [
            ("eta_common", self.eta_common),
            ("eta_syn", self.eta_syn),
            ("eta_neg", self.eta_neg),
        ] {
            if !(0.0..=1.0).contains(&eta) {
                return bad(format!("{name} = {eta} outside [0,1]"));
            }
        }
        if !(self.cluster_spread > 0.0) || !(self.class_separation >= 0.0) {
            return bad("cluster_spread must be > 0 and class_separation >= 0".into());
        }
        if !self.imbalance.is_finite() || !self.background_distance.is_finite() {
            return bad("imbalance and background_distance must be finite".into());
        }
        for &(a, b) in &self.synonym_pairs {
            if a >= self.n_classes || b >= self.n_classes || a == b {
                return bad(format!("invalid synonym pair ({a}, {b})"));
            }
        }
        let mut parent = HashMap::new();
        for &(fine, coarse) in &self.coarse_of {
            if fine >= self.n_classes || coarse >= self.n_classes {
                return bad(format!("coarse_of edge ({fine}, {coarse}) out of range"));
            }
            if parent.insert(fine, coarse).is_some() {
                return bad(format!("predicate {fine} has more than one coarse parent"));
            }
        }
        for &start in parent.keys() {
            let mut cur = start;
            for _ in 0..=parent.len() {
                match parent.get(&cur) {
                    Some(&next) if next == start => {
                        return bad(format!("coarse_of has a cycle through {start}"))
                    }
                    Some(&next) => cur = next,
                    None => break,
                }
            }
        }
        if let Some(names) = &self.predicate_names {
            if names.len() != self.n_classes {
                return bad(format!(
                    "{} predicate names for {} classes",
                    names.len(),
                    self.n_classes
                ));
            }
        }
        if self.tail_max > self.head_min {
            return bad("tail_max exceeds head_min".into());
        }
        Ok(())
    }

    fn class_size(&self, k: usize) -> usize {
        let scaled = self.max_per_class as f64 * ((k + 1) as f64).powf(-self.imbalance);
        (scaled.round() as usize).clamp(self.min_per_class, self.max_per_class)
    }

    fn names(&self) -> Vec<String> {
        self.predicate_names
            .clone()
            .unwrap_or_else(|| (0..self.n_classes).map(|k| format!("pred{k:02}")).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseTag {
    None,
    Common,
    Synonym,
    Missing,
}

impl fmt::Display for NoiseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseTag::None => "none",
            NoiseTag::Common => "common",
            NoiseTag::Synonym => "synonym",
            NoiseTag::Missing => "missing",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthEntry {
    /// `None` for background negatives.
    pub label: Option<usize>,
    pub tag: NoiseTag,
}

/// Hidden labels and injected-noise tags, keyed by record id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub entries: BTreeMap<String, TruthEntry>,
}

#[derive(Serialize, Deserialize)]
struct TruthLine {
    id: String,
    predicate: Option<String>,
    tag: NoiseTag,
}

impl GroundTruth {
    pub fn get(&self, id: &str) -> Option<&TruthEntry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, tag: NoiseTag) -> usize {
        self.entries.values().filter(|e| e.tag == tag).count()
    }

    /// Writes `{id, predicate, tag}` lines in id order.
    pub fn write_jsonl<W: Write>(&self, vocab: &PredicateVocab, mut out: W) -> std::io::Result<()> {
        for (id, e) in &self.entries {
            let line = TruthLine {
                id: id.clone(),
                predicate: e.label.and_then(|l| vocab.name(l)).map(str::to_owned),
                tag: e.tag,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn parse_jsonl(text: &str, vocab: &PredicateVocab) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TruthLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let label = match parsed.predicate {
                None => None,
                Some(name) => Some(vocab.index_of(&name).ok_or(Error::UnknownPredicate {
                    line: i + 1,
                    name,
                })?),
            };
            if entries
                .insert(parsed.id.clone(), TruthEntry { label, tag: parsed.tag })
                .is_some()
            {
                return Err(Error::DuplicateId(parsed.id));
            }
        }
        Ok(GroundTruth { entries })
    }
}

fn class_centers(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let (c, d, sep) = (config.n_classes, config.feature_dim, config.class_separation);
    if d >= c {
        // scaled basis vectors: every pair of centers is exactly `sep` apart
        let s = sep / std::f64::consts::SQRT_2;
        return (0..c)
            .map(|k| {
                let mut v = vec![0.0; d];
                v[k] = s;
                v
            })
            .collect();
    }
    let mut centers: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut min = f64::INFINITY;
    for i in 0..c {
        for j in i + 1..c {
            min = min.min(crate::pos_nsd::squared_euclidean(&centers[i], &centers[j]).sqrt());
        }
    }
    if min.is_finite() && min > 0.0 {
        let scale = sep / min;
        centers.iter_mut().flatten().for_each(|v| *v *= scale);
    }
    centers
}

fn exact_count(eta: f64, n: usize) -> usize {
    ((eta * n as f64) + 1e-9).floor() as usize
}

/// Generates a dataset and its ground truth. Pure function of `config`.
pub fn generate(config: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centers = class_centers(config, &mut rng);
    let spread = config.cluster_spread;

    let mut synonyms: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); config.n_classes];
    for &(a, b) in &config.synonym_pairs {
        synonyms[a].insert(b);
        synonyms[b].insert(a);
    }
    let coarse: HashMap<usize, usize> = config.coarse_of.iter().copied().collect();

    // Pair sets: own pair, plus the pairs of synonyms and of fine children.
    let mut pairs: Vec<BTreeSet<usize>> = (0..config.n_classes)
        .map(|k| BTreeSet::from([k % config.n_pairs]))
        .collect();
    for k in 0..config.n_classes {
        for &s in &synonyms[k] {
            pairs[k].insert(s % config.n_pairs);
        }
    }
    for (&fine, &parent) in &coarse {
        pairs[parent].insert(fine % config.n_pairs);
    }
    let pairs: Vec<Vec<usize>> = pairs.into_iter().map(|s| s.into_iter().collect()).collect();

    // (feature, pair, true label)
    let mut raw: Vec<(Vec<f64>, usize, Option<usize>)> = Vec::new();
    for k in 0..config.n_classes {
        for _ in 0..config.class_size(k) {
            let feature = centers[k]
                .iter()
                .map(|&m| m + spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let pair = *pairs[k].choose(&mut rng).expect("pair set is non-empty");
            raw.push((feature, pair, Some(k)));
        }
    }

    let d = config.feature_dim;
    let centroid: Vec<f64> = (0..d)
        .map(|i| centers.iter().map(|c| c[i]).sum::<f64>() / centers.len() as f64)
        .collect();
    let radius = centers
        .iter()
        .map(|c| crate::pos_nsd::squared_euclidean(c, &centroid).sqrt())
        .fold(0.0, f64::max);
    for _ in 0..config.background_count {
        let mut dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let extra: f64 = rng.sample::<f64, _>(StandardNormal);
        let r = radius + config.background_distance * spread + extra.abs() * spread;
        dir.iter_mut().zip(&centroid).for_each(|(v, c)| *v = c + *v / norm * r);
        let pair = rng.random_range(0..config.n_pairs);
        raw.push((dir, pair, None));
    }

    raw.shuffle(&mut rng);

    let mut records = Vec::with_capacity(raw.len());
    let mut truth = Vec::with_capacity(raw.len());
    for (i, (feature, pair, label)) in raw.into_iter().enumerate() {
        records.push(TripletRecord {
            id: format!("t{i:06}"),
            image_id: format!("img{:05}", i / config.image_size),
            subject_class: pair as u32,
            object_class: (config.n_pairs + pair) as u32,
            feature,
            label,
            state: if label.is_some() {
                LabelState::Annotated
            } else {
                LabelState::Negative
            },
            confidence: None,
            density: None,
        });
        truth.push(TruthEntry {
            label,
            tag: NoiseTag::None,
        });
    }

    // common-prone: fine label replaced by its coarse parent
    let mut eligible: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].label.is_some_and(|l| coarse.contains_key(&l)))
        .collect();
    eligible.shuffle(&mut rng);
    let n = exact_count(config.eta_common, eligible.len());
    for &i in &eligible[..n] {
        let fine = records[i].label.expect("eligible records are labelled");
        records[i].label = Some(coarse[&fine]);
        truth[i].tag = NoiseTag::Common;
    }

    // synonym-random: label swapped for a synonym
    let mut eligible: Vec<usize> = (0..records.len())
        .filter(|&i| {
            truth[i].tag == NoiseTag::None
                && records[i].label.is_some_and(|l| !synonyms[l].is_empty())
        })
        .collect();
    eligible.shuffle(&mut rng);
    let n = exact_count(config.eta_syn, eligible.len());
    for &i in &eligible[..n] {
        let l = records[i].label.expect("eligible records are labelled");
        let options: Vec<usize> = synonyms[l].iter().copied().collect();
        records[i].label = Some(*options.choose(&mut rng).expect("non-empty"));
        truth[i].tag = NoiseTag::Synonym;
    }

    // missing: annotated pair demoted to negative
    let mut eligible: Vec<usize> = (0..records.len())
        .filter(|&i| truth[i].tag == NoiseTag::None && records[i].label.is_some())
        .collect();
    eligible.shuffle(&mut rng);
    let n = exact_count(config.eta_neg, eligible.len());
    for &i in &eligible[..n] {
        records[i].label = None;
        records[i].state = LabelState::Negative;
        truth[i].tag = NoiseTag::Missing;
    }

    let entries = records
        .iter()
        .zip(truth)
        .map(|(r, t)| (r.id.clone(), t))
        .collect();
    let vocab = PredicateVocab::from_names(config.names())?;
    let dataset = Dataset::new(records, vocab, config.head_min, config.tail_max)?;
    Ok((dataset, GroundTruth { entries }))
}
