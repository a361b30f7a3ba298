use serde::{Deserialize, Serialize};

use super::codec::tokenize;
use super::csv::LabeledText;
use crate::error::{Error, Result};

/// Length and label statistics of a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_docs: usize,
    pub mean_words: f64,
    /// Population standard deviation of the word count.
    pub std_words: f64,
    /// `ceil(mean + 2·std)`, at least 1.
    pub max_words: usize,
    pub class_count: usize,
    pub class_histogram: Vec<usize>,
}

pub fn compute_stats(train: &[LabeledText]) -> Result<DatasetStats> {
    let counts: Vec<usize> = train.iter().map(|d| tokenize(&d.text).len()).collect();
    let labels: Vec<usize> = train.iter().map(|d| d.label).collect();
    stats_from_counts(&counts, &labels)
}

pub fn stats_from_counts(word_counts: &[usize], labels: &[usize]) -> Result<DatasetStats> {
    if word_counts.is_empty() {
        return Err(Error::Stats("no training documents".into()));
    }
    if word_counts.len() != labels.len() {
        return Err(Error::Stats(format!(
            "{} word counts for {} labels",
            word_counts.len(),
            labels.len()
        )));
    }
    let n = word_counts.len() as f64;
    let mean = word_counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = word_counts
        .iter()
        .map(|&c| (c as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let max_words = ((mean + 2.0 * std).ceil() as usize).max(1);

    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    let mut class_histogram = vec![0; class_count];
    for &l in labels {
        class_histogram[l] += 1;
    }
    Ok(DatasetStats {
        n_docs: word_counts.len(),
        mean_words: mean,
        std_words: std,
        max_words,
        class_count,
        class_histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_example() {
        let s = stats_from_counts(&[1, 3, 5], &[0, 1, 1]).unwrap();
        assert_eq!(s.mean_words, 3.0);
        assert!((s.std_words - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.std_words - 1.633).abs() < 1e-3);
        assert_eq!(s.max_words, 7);
        assert_eq!(s.class_histogram, vec![1, 2]);
    }

    #[test]
    fn zero_variance() {
        let s = stats_from_counts(&[12; 9], &[0; 9]).unwrap();
        assert_eq!(s.std_words, 0.0);
        assert_eq!(s.max_words, 12);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(stats_from_counts(&[], &[]), Err(Error::Stats(_))));
    }

    #[test]
    fn empty_documents_still_give_one_word() {
        let s = stats_from_counts(&[0, 0], &[0, 0]).unwrap();
        assert_eq!(s.max_words, 1);
    }

    #[test]
    fn from_labeled_text() {
        let docs = vec![
            LabeledText { label: 0, text: "a b".into() },
            LabeledText { label: 2, text: "a b c d".into() },
        ];
        let s = compute_stats(&docs).unwrap();
        assert_eq!(s.mean_words, 3.0);
        assert_eq!(s.class_count, 3);
        assert_eq!(s.class_histogram, vec![1, 0, 1]);
    }

    proptest! {
        #[test]
        fn histogram_sums_to_document_count(
            rows in prop::collection::vec((0usize..200, 0usize..6), 1..60)
        ) {
            let (counts, labels): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
            let s = stats_from_counts(&counts, &labels).unwrap();
            prop_assert_eq!(s.class_histogram.iter().sum::<usize>(), s.n_docs);
            prop_assert!(labels.iter().all(|&l| l < s.class_count));
            prop_assert!(s.max_words >= 1);
            prop_assert!(s.max_words as f64 >= s.mean_words);
        }
    }
}
