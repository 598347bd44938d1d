//! Shared data model: triplet records, the predicate vocabulary, the
//! head/body/tail frequency partition and the line-delimited file format.
//!
//! A dataset file holds one JSON object per line:
//!
//! ```text
//! {"id":"t1","image_id":"img0","subject_class":3,"object_class":7,"predicate":"on","feature":[0.1,2.5]}
//! {"id":"t2","image_id":"img0","subject_class":3,"object_class":9,"predicate":null,"feature":[1.0,0.0]}
//! ```
//!
//! A `null` predicate marks an un-annotated (negative) pair. Files written by
//! this crate may carry an extra `state` field when the label state differs
//! from the one implied by `predicate`, plus optional `confidence` and `rho`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HEAD_MIN: u64 = 10_000;
pub const DEFAULT_TAIL_MAX: u64 = 500;

/// Frequency tier of a predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Head,
    Body,
    Tail,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Head, Part::Body, Part::Tail];
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Part::Head => "head",
            Part::Body => "body",
            Part::Tail => "tail",
        })
    }
}

/// One value per frequency tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartMap<T> {
    pub head: T,
    pub body: T,
    pub tail: T,
}

impl<T: Copy> PartMap<T> {
    pub fn uniform(value: T) -> Self {
        PartMap {
            head: value,
            body: value,
            tail: value,
        }
    }

    pub fn get(&self, part: Part) -> T {
        match part {
            Part::Head => self.head,
            Part::Body => self.body,
            Part::Tail => self.tail,
        }
    }

    pub fn set(&mut self, part: Part, value: T) {
        match part {
            Part::Head => self.head = value,
            Part::Body => self.body = value,
            Part::Tail => self.tail = value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelState {
    Annotated,
    Negative,
    Pseudo,
    Corrected,
    CleanKept,
}

impl fmt::Display for LabelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelState::Annotated => "annotated",
            LabelState::Negative => "negative",
            LabelState::Pseudo => "pseudo",
            LabelState::Corrected => "corrected",
            LabelState::CleanKept => "clean_kept",
        })
    }
}

/// Ordered predicate names with their annotated-sample counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PredicateVocab {
    names: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl PredicateVocab {
    pub fn new(names: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if names.len() != counts.len() {
            return Err(Error::InvalidVocab(format!(
                "{} names but {} counts",
                names.len(),
                counts.len()
            )));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::InvalidVocab(format!("empty predicate name at index {i}")));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::InvalidVocab(format!("duplicate predicate {name:?}")));
            }
        }
        Ok(PredicateVocab {
            names,
            counts,
            index,
        })
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let counts = vec![0; names.len()];
        Self::new(names, counts)
    }

    /// Parses a sidecar vocabulary: one predicate per line, index = order of
    /// appearance. Blank lines and lines starting with `#` are skipped.
    pub fn parse_sidecar(text: &str) -> Result<Self> {
        let names = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_owned)
            .collect::<Vec<_>>();
        if names.is_empty() {
            return Err(Error::InvalidVocab("no predicates listed".into()));
        }
        Self::from_names(names)
    }

    pub fn to_sidecar(&self) -> String {
        let mut out = String::new();
        for name in &self.names {
            out.push_str(name);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    fn push(&mut self, name: String) -> usize {
        let i = self.names.len();
        self.index.insert(name.clone(), i);
        self.names.push(name);
        self.counts.push(0);
        i
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyPartition {
    parts: Vec<Part>,
    pub head_min: u64,
    pub tail_max: u64,
}

impl FrequencyPartition {
    pub fn part_of(&self, predicate: usize) -> Part {
        self.parts[predicate]
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }
}

/// Assigns every predicate to a frequency tier: strictly above `head_min` is
/// head, strictly below `tail_max` is tail, everything else (boundaries
/// included) is body.
pub fn partition_predicates(
    vocab: &PredicateVocab,
    head_min: u64,
    tail_max: u64,
) -> Result<FrequencyPartition> {
    if tail_max > head_min {
        return Err(Error::InvalidConfig(format!(
            "tail_max ({tail_max}) exceeds head_min ({head_min})"
        )));
    }
    let parts = vocab
        .counts()
        .iter()
        .map(|&n| {
            if n > head_min {
                Part::Head
            } else if n < tail_max {
                Part::Tail
            } else {
                Part::Body
            }
        })
        .collect();
    Ok(FrequencyPartition {
        parts,
        head_min,
        tail_max,
    })
}

/// One subject-predicate-object sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletRecord {
    pub id: String,
    pub image_id: String,
    pub subject_class: u32,
    pub object_class: u32,
    pub feature: Vec<f64>,
    pub label: Option<usize>,
    pub state: LabelState,
    pub confidence: Option<f64>,
    pub density: Option<u32>,
}

impl TripletRecord {
    pub fn is_positive(&self) -> bool {
        self.state == LabelState::Annotated
    }

    pub fn is_negative(&self) -> bool {
        self.state == LabelState::Negative
    }

    pub fn pair(&self) -> (u32, u32) {
        (self.subject_class, self.object_class)
    }

    fn check_state(&self) -> std::result::Result<(), String> {
        let negative = self.state == LabelState::Negative;
        if negative == self.label.is_some() {
            return Err(format!(
                "record {:?}: state {} inconsistent with label {:?}",
                self.id, self.state, self.label
            ));
        }
        if let Some(c) = self.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(format!("record {:?}: confidence {c} outside [0,1]", self.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<TripletRecord>,
    pub vocab: PredicateVocab,
    pub partition: FrequencyPartition,
    pub feature_dim: usize,
}

impl Dataset {
    /// Validates records against the vocabulary and builds a dataset. Vocab
    /// counts are recomputed from the annotated records and the partition is
    /// derived from them.
    pub fn new(
        records: Vec<TripletRecord>,
        vocab: PredicateVocab,
        head_min: u64,
        tail_max: u64,
    ) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::EmptyDataset);
        };
        let feature_dim = first.feature.len();
        if feature_dim == 0 {
            return Err(Error::Precondition("feature vectors are empty".into()));
        }
        let mut counts = vec![0u64; vocab.len()];
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.feature.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    line: i + 1,
                    expected: feature_dim,
                    found: r.feature.len(),
                });
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            r.check_state().map_err(Error::Precondition)?;
            if let Some(l) = r.label {
                if l >= vocab.len() {
                    return Err(Error::Precondition(format!(
                        "record {:?}: predicate index {l} outside vocabulary of {}",
                        r.id,
                        vocab.len()
                    )));
                }
                if r.state == LabelState::Annotated {
                    counts[l] += 1;
                }
            }
        }
        let vocab = PredicateVocab::new(vocab.names, counts)?;
        let partition = partition_predicates(&vocab, head_min, tail_max)?;
        Ok(Dataset {
            records,
            vocab,
            partition,
            feature_dim,
        })
    }

    /// Same vocabulary, partition and dimensionality with a new record list.
    /// Counts and partition are kept from `self`.
    pub fn with_records(&self, records: Vec<TripletRecord>) -> Dataset {
        Dataset {
            records,
            vocab: self.vocab.clone(),
            partition: self.partition.clone(),
            feature_dim: self.feature_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Annotated positives, T⁺.
    pub fn positives(&self) -> Vec<TripletRecord> {
        self.records.iter().filter(|r| r.is_positive()).cloned().collect()
    }

    /// Un-annotated negatives, T⁻.
    pub fn negatives(&self) -> Vec<TripletRecord> {
        self.records.iter().filter(|r| r.is_negative()).cloned().collect()
    }

    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect()
    }

    pub fn label_name(&self, label: Option<usize>) -> Option<&str> {
        label.and_then(|l| self.vocab.name(l))
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            let wire = WireRecord::from_record(r, &self.vocab);
            serde_json::to_writer(&mut out, &wire)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Fixed predicate vocabulary. When absent, predicates are indexed in
    /// order of first appearance.
    pub vocab: Option<PredicateVocab>,
    pub head_min: u64,
    pub tail_max: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            vocab: None,
            head_min: DEFAULT_HEAD_MIN,
            tail_max: DEFAULT_TAIL_MAX,
        }
    }
}

/// Identifier that may be written either as a JSON string or an integer.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum IdRepr {
    Text(String),
    Number(u64),
}

fn de_id<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    Ok(match IdRepr::deserialize(d)? {
        IdRepr::Text(s) => s,
        IdRepr::Number(n) => n.to_string(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct WireRecord {
    #[serde(deserialize_with = "de_id")]
    pub id: String,
    #[serde(deserialize_with = "de_id")]
    pub image_id: String,
    pub subject_class: u32,
    pub object_class: u32,
    pub predicate: Option<String>,
    pub feature: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<LabelState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<u32>,
}

impl WireRecord {
    fn from_record(r: &TripletRecord, vocab: &PredicateVocab) -> Self {
        let implied = if r.label.is_some() {
            LabelState::Annotated
        } else {
            LabelState::Negative
        };
        WireRecord {
            id: r.id.clone(),
            image_id: r.image_id.clone(),
            subject_class: r.subject_class,
            object_class: r.object_class,
            predicate: r.label.and_then(|l| vocab.name(l)).map(str::to_owned),
            feature: r.feature.clone(),
            state: (r.state != implied).then_some(r.state),
            confidence: r.confidence,
            rho: r.density,
        }
    }
}

/// Parses a single dataset line into its wire form.
pub fn parse_record_line(line: &str) -> std::result::Result<WireRecordView, String> {
    serde_json::from_str::<WireRecord>(line)
        .map(WireRecordView)
        .map_err(|e| e.to_string())
}

/// Opaque parsed line; exposed so callers (and fuzzers) can exercise the
/// per-line decoder on its own.
#[derive(Debug)]
pub struct WireRecordView(pub(crate) WireRecord);

impl WireRecordView {
    pub fn id(&self) -> &str {
        &self.0.id
    }

    pub fn predicate(&self) -> Option<&str> {
        self.0.predicate.as_deref()
    }

    pub fn feature(&self) -> &[f64] {
        &self.0.feature
    }
}

/// Reads a line-delimited dataset. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn read_dataset<R: BufRead>(reader: R, options: &LoadOptions) -> Result<Dataset> {
    let fixed_vocab = options.vocab.is_some();
    let mut vocab = match &options.vocab {
        Some(v) => PredicateVocab::from_names(v.names().to_vec())?,
        None => PredicateVocab::from_names(Vec::new())?,
    };
    let mut records: Vec<TripletRecord> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut feature_dim = None;

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;

        let dim = *feature_dim.get_or_insert(wire.feature.len());
        if wire.feature.len() != dim {
            return Err(Error::DimensionMismatch {
                line: line_no,
                expected: dim,
                found: wire.feature.len(),
            });
        }
        if dim == 0 {
            return Err(Error::Parse {
                line: line_no,
                message: "feature vector is empty".into(),
            });
        }
        if wire.feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                message: "feature contains a non-finite value".into(),
            });
        }
        if !seen.insert(wire.id.clone()) {
            return Err(Error::DuplicateId(wire.id));
        }

        let label = match wire.predicate {
            None => None,
            Some(name) => Some(match vocab.index_of(&name) {
                Some(i) => i,
                None if fixed_vocab => {
                    return Err(Error::UnknownPredicate {
                        line: line_no,
                        name,
                    })
                }
                None if name.is_empty() => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "empty predicate name".into(),
                    })
                }
                None => vocab.push(name),
            }),
        };
        let state = wire.state.unwrap_or(if label.is_some() {
            LabelState::Annotated
        } else {
            LabelState::Negative
        });
        let record = TripletRecord {
            id: wire.id,
            image_id: wire.image_id,
            subject_class: wire.subject_class,
            object_class: wire.object_class,
            feature: wire.feature,
            label,
            state,
            confidence: wire.confidence,
            density: wire.rho,
        };
        record.check_state().map_err(|message| Error::Parse {
            line: line_no,
            message,
        })?;
        records.push(record);
    }

    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(records, vocab, options.head_min, options.tail_max)
}

pub fn parse_dataset(text: &str, options: &LoadOptions) -> Result<Dataset> {
    read_dataset(text.as_bytes(), options)
}

pub fn load_dataset(path: &Path, options: &LoadOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(std::io::BufReader::new(file), options)
}

pub fn load_vocab(path: &Path) -> Result<PredicateVocab> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PredicateVocab::parse_sidecar(&text)
}

/// Builds T̃⁺: annotated positives first, then mined pseudo-labelled records,
/// each in input order.
pub fn compose_positive_set(
    positives: &[TripletRecord],
    mined: &[TripletRecord],
) -> Result<Vec<TripletRecord>> {
    if let Some(r) = mined.iter().find(|r| r.state != LabelState::Pseudo) {
        return Err(Error::Precondition(format!(
            "mined record {:?} has state {}, expected pseudo",
            r.id, r.state
        )));
    }
    let ids: HashSet<&str> = positives.iter().map(|r| r.id.as_str()).collect();
    if let Some(r) = mined.iter().find(|r| ids.contains(r.id.as_str())) {
        return Err(Error::DuplicateId(r.id.clone()));
    }
    Ok(positives.iter().chain(mined).cloned().collect())
}
