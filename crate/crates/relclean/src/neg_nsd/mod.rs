//! Negative noisy-sample detection.
//!
//! A classifier with a confidence head is trained on the annotated positives
//! only. Each un-annotated negative is then scored; when its confidence
//! reaches the threshold of the frequency tier of its predicted predicate it
//! becomes a pseudo-labelled positive carrying `argmax(p)`.

mod network;
mod objective;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use network::{
    train_model, Activation, ConfidenceModel, Forward, NetworkShape, TrainReport, TrainSettings,
};
pub use objective::{adjust_probs, loss, LOG_FLOOR};

use crate::dataset::{FrequencyPartition, LabelState, Part, PartMap, TripletRecord};
use crate::error::{Error, Result};

/// Confidence threshold for one frequency tier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Value(f64),
    /// Never mine predicates of this tier.
    Disabled,
}

impl Threshold {
    fn validate(self) -> Result<()> {
        match self {
            Threshold::Value(v) if !(0.0..=1.0).contains(&v) => Err(Error::InvalidConfig(
                format!("threshold {v} outside [0,1]"),
            )),
            _ => Ok(()),
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Value(v) => s.serialize_f64(*v),
            Threshold::Disabled => s.serialize_str("disabled"),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(Threshold::Value(v)),
            Repr::Text(s) if s == "disabled" => Ok(Threshold::Disabled),
            Repr::Text(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"disabled\", got {s:?}"
            ))),
        }
    }
}

/// How tier thresholds are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Compare the raw confidence against θ.
    #[default]
    Absolute,
    /// θ is a quantile level of the confidences of negatives predicted into
    /// the same tier; the cutoff is the confidence at that quantile.
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NegNsdConfig {
    pub thresholds: PartMap<Threshold>,
    pub threshold_mode: ThresholdMode,
    pub lambda: f64,
    pub hidden: usize,
    pub activation: Activation,
    /// Initial bias of the confidence logit.
    pub confidence_bias: f64,
    /// Hold the confidence bias fixed during training, so that inputs far
    /// from the training data keep a confidence near `sigmoid(confidence_bias)`.
    pub freeze_confidence_bias: bool,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for NegNsdConfig {
    fn default() -> Self {
        NegNsdConfig {
            thresholds: PartMap {
                head: Threshold::Value(0.95),
                body: Threshold::Value(0.90),
                tail: Threshold::Value(0.60),
            },
            threshold_mode: ThresholdMode::Absolute,
            lambda: 0.1,
            hidden: 256,
            activation: Activation::Radial,
            confidence_bias: -4.0,
            freeze_confidence_bias: true,
            epochs: 40,
            learning_rate: 2.0,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl NegNsdConfig {
    pub fn validate(&self) -> Result<()> {
        for part in Part::ALL {
            self.thresholds.get(part).validate()?;
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "hidden width and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !self.confidence_bias.is_finite() {
            return Err(Error::InvalidConfig("confidence_bias must be finite".into()));
        }
        Ok(())
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed: self.seed,
            freeze_confidence_bias: self.freeze_confidence_bias,
        }
    }
}

/// `1 / max(count, 1)` per predicate.
pub fn class_weights(counts: &[u64]) -> Vec<f64> {
    counts.iter().map(|&n| 1.0 / n.max(1) as f64).collect()
}

/// Trains the confidence model on annotated positives.
pub fn train(
    positives: &[TripletRecord],
    n_classes: usize,
    config: &NegNsdConfig,
) -> Result<(ConfidenceModel, TrainReport)> {
    config.validate()?;
    let first = positives
        .first()
        .ok_or_else(|| Error::Precondition("no annotated positives to train on".into()))?;
    let dim = first.feature.len();
    let mut counts = vec![0u64; n_classes];
    let mut features = Vec::with_capacity(positives.len());
    let mut targets = Vec::with_capacity(positives.len());
    for r in positives {
        let label = r
            .label
            .ok_or_else(|| Error::Precondition(format!("training record {:?} has no label", r.id)))?;
        if label >= n_classes {
            return Err(Error::Precondition(format!(
                "record {:?}: label {label} outside {n_classes} classes",
                r.id
            )));
        }
        if r.feature.len() != dim {
            return Err(Error::Precondition(format!(
                "record {:?}: feature dimension {} != {dim}",
                r.id,
                r.feature.len()
            )));
        }
        counts[label] += 1;
        features.push(r.feature.as_slice());
        targets.push(label);
    }
    let shape = NetworkShape {
        input_dim: dim,
        hidden: config.hidden,
        n_classes,
        activation: config.activation,
        confidence_bias: config.confidence_bias,
    };
    train_model(
        shape,
        &features,
        &targets,
        class_weights(&counts),
        config.lambda,
        config.train_settings(),
    )
}

/// Outcome of scoring the negatives.
#[derive(Debug, Clone, Default)]
pub struct NegDetection {
    /// Recovered missing annotations, state `Pseudo`.
    pub noisy: Vec<TripletRecord>,
    /// Negatives kept as background.
    pub clean: Vec<TripletRecord>,
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Confidence at quantile level `q` of `sorted` (ascending), 1-based rank
/// `ceil(q * n)`.
fn quantile_cutoff(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Splits negatives into mined pseudo positives and clean negatives. Both
/// outputs keep input order and every scored record carries its confidence.
pub fn detect_negatives(
    model: &ConfidenceModel,
    negatives: &[TripletRecord],
    config: &NegNsdConfig,
    partition: &FrequencyPartition,
) -> Result<NegDetection> {
    config.validate()?;
    if partition.parts().len() != model.n_classes() {
        return Err(Error::Precondition(format!(
            "model predicts {} classes, vocabulary has {}",
            model.n_classes(),
            partition.parts().len()
        )));
    }
    for r in negatives {
        if r.feature.len() != model.input_dim() {
            return Err(Error::Precondition(format!(
                "record {:?}: feature dimension {} != model input {}",
                r.id,
                r.feature.len(),
                model.input_dim()
            )));
        }
        if r.state != LabelState::Negative {
            return Err(Error::Precondition(format!(
                "record {:?} is {}, not negative",
                r.id, r.state
            )));
        }
    }

    let scored: Vec<(usize, f64)> = negatives
        .par_iter()
        .map(|r| {
            let (p, c) = model.predict(&r.feature);
            (argmax(&p), c)
        })
        .collect();

    let cutoffs: PartMap<Option<f64>> = {
        let mut cut = PartMap::uniform(None);
        for part in Part::ALL {
            let value = match (config.thresholds.get(part), config.threshold_mode) {
                (Threshold::Disabled, _) => None,
                (Threshold::Value(v), ThresholdMode::Absolute) => Some(v),
                (Threshold::Value(q), ThresholdMode::Quantile) => {
                    let mut cs: Vec<f64> = scored
                        .iter()
                        .filter(|(k, _)| partition.part_of(*k) == part)
                        .map(|&(_, c)| c)
                        .collect();
                    if cs.is_empty() {
                        None
                    } else {
                        cs.sort_by(f64::total_cmp);
                        Some(quantile_cutoff(&cs, q))
                    }
                }
            };
            cut.set(part, value);
        }
        cut
    };

    let mut out = NegDetection::default();
    for (r, &(k, c)) in negatives.iter().zip(&scored) {
        let mut rec = r.clone();
        rec.confidence = Some(c);
        match cutoffs.get(partition.part_of(k)) {
            Some(theta) if c >= theta => {
                rec.label = Some(k);
                rec.state = LabelState::Pseudo;
                out.noisy.push(rec);
            }
            _ => out.clean.push(rec),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{partition_predicates, PredicateVocab};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn negative(id: &str, feature: Vec<f64>) -> TripletRecord {
        TripletRecord {
            id: id.into(),
            image_id: "i".into(),
            subject_class: 0,
            object_class: 0,
            feature,
            label: None,
            state: LabelState::Negative,
            confidence: None,
            density: None,
        }
    }

    /// A model whose confidence head is a constant `sigmoid(bias)` and whose
    /// classification head always prefers class `winner`.
    fn constant_model(n_classes: usize, winner: usize, conf_logit: f64) -> ConfidenceModel {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let shape = NetworkShape {
            input_dim: 2,
            hidden: 3,
            n_classes,
            activation: Activation::Tanh,
            confidence_bias: conf_logit,
        };
        let mut m =
            ConfidenceModel::init(shape, &[], vec![1.0; n_classes], 0.1, &mut rng).unwrap();
        // zero every weight, then set biases
        let len = m.params().len();
        let p = m.params_mut();
        p.iter_mut().for_each(|v| *v = 0.0);
        let b_class = 2 * 3 + 3 + n_classes * 3;
        p[b_class + winner] = 5.0;
        p[len - 1] = conf_logit;
        m
    }

    fn tail_partition(n: usize) -> FrequencyPartition {
        let vocab = PredicateVocab::from_names((0..n).map(|i| format!("p{i}")).collect()).unwrap();
        partition_predicates(&vocab, 10_000, 500).unwrap()
    }

    fn logit(c: f64) -> f64 {
        (c / (1.0 - c)).ln()
    }

    #[test]
    fn high_confidence_tail_prediction_is_mined() {
        let model = constant_model(3, 2, logit(0.95));
        let negs = vec![negative("n1", vec![0.0, 1.0])];
        let det = detect_negatives(&model, &negs, &NegNsdConfig::default(), &tail_partition(3))
            .unwrap();
        assert_eq!(det.noisy.len(), 1);
        assert_eq!(det.noisy[0].label, Some(2));
        assert_eq!(det.noisy[0].state, LabelState::Pseudo);
        assert!((det.noisy[0].confidence.unwrap() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn confidence_equal_to_threshold_is_mined() {
        let model = constant_model(2, 0, 0.0);
        let c = model.predict(&[0.0, 0.0]).1;
        let mut cfg = NegNsdConfig::default();
        cfg.thresholds.tail = Threshold::Value(c);
        let negs = vec![negative("n", vec![1.0, 2.0])];
        let det = detect_negatives(&model, &negs, &cfg, &tail_partition(2)).unwrap();
        assert_eq!(det.noisy.len(), 1);
        cfg.thresholds.tail = Threshold::Value(c + 1e-9);
        let det = detect_negatives(&model, &negs, &cfg, &tail_partition(2)).unwrap();
        assert_eq!(det.noisy.len(), 0);
    }

    #[test]
    fn disabled_thresholds_mine_nothing() {
        let model = constant_model(2, 1, 30.0);
        let cfg = NegNsdConfig {
            thresholds: PartMap::uniform(Threshold::Disabled),
            ..NegNsdConfig::default()
        };
        let negs: Vec<_> = (0..5).map(|i| negative(&format!("n{i}"), vec![i as f64, 0.0])).collect();
        let det = detect_negatives(&model, &negs, &cfg, &tail_partition(2)).unwrap();
        assert!(det.noisy.is_empty());
        assert_eq!(det.clean.len(), 5);
        assert!(det.clean.iter().all(|r| r.confidence.is_some()));
    }

    #[test]
    fn quantile_mode_mines_top_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = NetworkShape {
            input_dim: 2,
            hidden: 8,
            n_classes: 1,
            activation: Activation::Tanh,
            confidence_bias: 0.0,
        };
        let model = ConfidenceModel::init(shape, &[], vec![1.0], 0.1, &mut rng).unwrap();
        let negs: Vec<_> = (0..100)
            .map(|i| negative(&format!("n{i}"), vec![i as f64 / 10.0, -(i as f64) / 7.0]))
            .collect();
        let mut cfg = NegNsdConfig {
            threshold_mode: ThresholdMode::Quantile,
            ..NegNsdConfig::default()
        };
        cfg.thresholds.tail = Threshold::Value(0.9);
        let det = detect_negatives(&model, &negs, &cfg, &tail_partition(1)).unwrap();
        // cutoff is the 90th ranked value, so at least the top 11 qualify
        assert!(det.noisy.len() >= 11 && det.noisy.len() < 30, "{}", det.noisy.len());
    }

    #[test]
    fn rejects_dimension_mismatch_and_non_negative_input() {
        let model = constant_model(2, 0, 0.0);
        let cfg = NegNsdConfig::default();
        let bad = vec![negative("n", vec![1.0])];
        assert!(detect_negatives(&model, &bad, &cfg, &tail_partition(2)).is_err());
        let mut pos = negative("p", vec![1.0, 1.0]);
        pos.state = LabelState::Annotated;
        pos.label = Some(0);
        assert!(detect_negatives(&model, &[pos], &cfg, &tail_partition(2)).is_err());
        assert!(detect_negatives(&model, &[], &cfg, &tail_partition(3)).is_err());
    }

    #[test]
    fn train_rejects_empty_positives() {
        assert!(matches!(
            train(&[], 2, &NegNsdConfig::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn class_weights_are_reciprocal_counts() {
        assert_eq!(class_weights(&[4, 0, 1]), vec![0.25, 1.0, 1.0]);
    }

    #[test]
    fn threshold_serde() {
        #[derive(Deserialize, Serialize)]
        struct T {
            t: PartMap<Threshold>,
        }
        let parsed: T = toml::from_str("[t]\nhead = \"disabled\"\nbody = 0.9\ntail = 0.6\n").unwrap();
        assert_eq!(parsed.t.head, Threshold::Disabled);
        assert_eq!(parsed.t.body, Threshold::Value(0.9));
        assert!(toml::from_str::<T>("[t]\nhead = \"off\"\nbody = 0.9\ntail = 0.6\n").is_err());
        let mut cfg = NegNsdConfig::default();
        cfg.thresholds.body = Threshold::Value(1.5);
        assert!(cfg.validate().is_err());
    }
}
