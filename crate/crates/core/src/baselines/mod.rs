//! Bag-of-words and TF-IDF features with a multinomial logistic
//! regression classifier.

mod features;
mod linear;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::LabeledText;

pub use features::{bow_features, tfidf_features, words, FeatureKind, SparseVector, Vocabulary, VOCAB_CAP};
pub use linear::{softmax, train_linear, LinearConfig, LinearModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub vocab_cap: usize,
    pub linear: LinearConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            vocab_cap: VOCAB_CAP,
            linear: LinearConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub features: FeatureKind,
    pub vocab_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Test accuracy of always answering the most frequent train class.
    pub majority_accuracy: f64,
    pub wall_time_secs: f64,
}

/// A fitted baseline: vocabulary, feature kind and classifier.
#[derive(Clone, Debug)]
pub struct Baseline {
    pub kind: FeatureKind,
    pub vocab: Vocabulary,
    pub model: LinearModel,
}

impl Baseline {
    pub fn fit(train: &[LabeledText], classes: usize, kind: FeatureKind, config: &BaselineConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config("baseline needs training documents".into()));
        }
        let vocab = Vocabulary::build(train.iter().map(|d| d.text.as_str()), config.vocab_cap)?;
        let texts: Vec<&str> = train.iter().map(|d| d.text.as_str()).collect();
        let xs = kind.extract_all(&texts, &vocab);
        let labels: Vec<usize> = train.iter().map(|d| d.label).collect();
        let model = train_linear(&xs, &labels, classes, vocab.len(), &config.linear)?;
        Ok(Baseline { kind, vocab, model })
    }

    pub fn predict(&self, text: &str) -> usize {
        self.model.predict(&self.kind.extract(text, &self.vocab))
    }

    pub fn accuracy(&self, docs: &[LabeledText]) -> f64 {
        let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
        let xs = self.kind.extract_all(&texts, &self.vocab);
        let labels: Vec<usize> = docs.iter().map(|d| d.label).collect();
        self.model.accuracy(&xs, &labels)
    }
}

/// Most frequent label, lowest index on ties.
pub fn majority_class(labels: impl IntoIterator<Item = usize>, classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for l in labels {
        counts[l] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    counts.iter().position(|&c| c == max).unwrap_or(0)
}

/// Fits on `train` and scores both splits.
pub fn run_baseline(
    train: &[LabeledText],
    test: &[LabeledText],
    kind: FeatureKind,
    config: &BaselineConfig,
) -> Result<BaselineReport> {
    if test.is_empty() {
        return Err(Error::Config("baseline needs test documents".into()));
    }
    let start = std::time::Instant::now();
    let classes = train.iter().chain(test).map(|d| d.label).max().unwrap_or(0) + 1;
    let baseline = Baseline::fit(train, classes.max(2), kind, config)?;
    let majority = majority_class(train.iter().map(|d| d.label), classes);
    let majority_accuracy = test.iter().filter(|d| d.label == majority).count() as f64 / test.len() as f64;
    Ok(BaselineReport {
        features: kind,
        vocab_size: baseline.vocab.len(),
        n_train: train.len(),
        n_test: test.len(),
        train_accuracy: baseline.accuracy(train),
        test_accuracy: baseline.accuracy(test),
        majority_accuracy,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(label: usize, text: &str) -> LabeledText {
        LabeledText { label, text: text.into() }
    }

    fn split() -> (Vec<LabeledText>, Vec<LabeledText>) {
        let train = vec![
            doc(0, "stocks fell on wall street"),
            doc(0, "shares and stocks rose"),
            doc(0, "bank profits beat forecasts"),
            doc(1, "the team won the final match"),
            doc(1, "striker scores twice in match"),
            doc(1, "coach praises team after win"),
            doc(2, "new chip doubles battery life"),
            doc(2, "software update fixes chip bug"),
        ];
        let test = vec![
            doc(0, "stocks and shares slip"),
            doc(1, "team loses the match"),
            doc(2, "chip maker ships software"),
            doc(1, "final whistle"),
        ];
        (train, test)
    }

    #[test]
    fn keyword_split_is_learned_by_both_feature_kinds() {
        let (train, test) = split();
        for kind in [FeatureKind::Bow, FeatureKind::Tfidf] {
            let cfg = BaselineConfig { linear: LinearConfig { epochs: 30, ..LinearConfig::default() }, ..Default::default() };
            let r = run_baseline(&train, &test, kind, &cfg).unwrap();
            assert_eq!(r.train_accuracy, 1.0, "{kind:?}");
            assert!(r.test_accuracy >= 0.75, "{r:?}");
            assert_eq!(r.majority_accuracy, 0.25);
            assert_eq!((r.n_train, r.n_test), (8, 4));
        }
    }

    #[test]
    fn majority_prefers_lowest_on_ties() {
        assert_eq!(majority_class([2, 1, 2, 1], 3), 1);
        assert_eq!(majority_class([2, 2, 0], 3), 2);
    }

    #[test]
    fn vocabulary_cap_applies() {
        let (train, test) = split();
        let cfg = BaselineConfig { vocab_cap: 5, ..Default::default() };
        let r = run_baseline(&train, &test, FeatureKind::Tfidf, &cfg).unwrap();
        assert_eq!(r.vocab_size, 5);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let (train, test) = split();
        let cfg = BaselineConfig::default();
        assert!(run_baseline(&[], &test, FeatureKind::Bow, &cfg).is_err());
        assert!(run_baseline(&train, &[], FeatureKind::Bow, &cfg).is_err());
    }
}
