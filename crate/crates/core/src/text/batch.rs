use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::codec::{tokenize, CharCodec, PAD_ID};
use super::csv::LabeledText;
use super::stats::DatasetStats;
use crate::error::{Error, Result};

/// A document as a `[max_words × word_len]` grid of character ids.
/// Rows at and beyond `n_words` are padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedDocument {
    pub chars: Vec<u8>,
    pub n_words: usize,
    pub label: usize,
    pub max_words: usize,
    pub word_len: usize,
    /// Words that contained no ASCII character and encode to all padding.
    pub dropped_words: usize,
}

impl EncodedDocument {
    pub fn encode(text: &str, label: usize, codec: &CharCodec, max_words: usize) -> Self {
        let word_len = codec.word_len();
        let mut chars = vec![PAD_ID; max_words * word_len];
        let words = tokenize(text);
        let n_words = words.len().min(max_words);
        let mut dropped_words = 0;
        for (row, word) in chars.chunks_mut(word_len).zip(&words[..n_words]) {
            if !codec.encode_word_into(word, row) {
                dropped_words += 1;
            }
        }
        EncodedDocument {
            chars,
            n_words,
            label,
            max_words,
            word_len,
            dropped_words,
        }
    }

    pub fn word(&self, i: usize) -> &[u8] {
        &self.chars[i * self.word_len..(i + 1) * self.word_len]
    }

    /// The rows holding real words.
    pub fn word_rows(&self) -> &[u8] {
        &self.chars[..self.n_words * self.word_len]
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.max_words).map(|i| i < self.n_words).collect()
    }
}

/// Encodes every document with the training split's `max_words`.
pub fn encode_corpus(
    docs: &[LabeledText],
    codec: &CharCodec,
    max_words: usize,
) -> Vec<EncodedDocument> {
    docs.par_iter()
        .map(|d| EncodedDocument::encode(&d.text, d.label, codec, max_words))
        .collect()
}

/// Fixed-shape minibatch: `chars` is `[B × max_words × word_len]`,
/// `masks` is `[B × max_words]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub chars: Vec<u8>,
    pub masks: Vec<bool>,
    pub labels: Vec<usize>,
    /// Position of each row in the source document list.
    pub indices: Vec<usize>,
    pub max_words: usize,
    pub word_len: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn doc_chars(&self, b: usize) -> &[u8] {
        let stride = self.max_words * self.word_len;
        &self.chars[b * stride..(b + 1) * stride]
    }

    pub fn doc_mask(&self, b: usize) -> &[bool] {
        &self.masks[b * self.max_words..(b + 1) * self.max_words]
    }

    pub fn n_words(&self, b: usize) -> usize {
        self.doc_mask(b).iter().take_while(|&&m| m).count()
    }
}

/// Lazily assembled minibatches in a seed-determined order.
pub struct BatchStream<'a> {
    docs: &'a [EncodedDocument],
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    max_words: usize,
}

impl<'a> BatchStream<'a> {
    pub fn batch_count(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let word_len = self.docs[indices[0]].word_len;
        let stride = self.max_words * word_len;
        let mut chars = vec![PAD_ID; indices.len() * stride];
        let mut masks = vec![false; indices.len() * self.max_words];
        let mut labels = Vec::with_capacity(indices.len());
        for (b, &i) in indices.iter().enumerate() {
            let doc = &self.docs[i];
            let n = doc.n_words.min(self.max_words);
            chars[b * stride..b * stride + n * word_len].copy_from_slice(&doc.chars[..n * word_len]);
            masks[b * self.max_words..b * self.max_words + n].fill(true);
            labels.push(doc.label);
        }
        Some(Batch {
            chars,
            masks,
            labels,
            indices,
            max_words: self.max_words,
            word_len,
        })
    }
}

/// Splits documents into minibatches of `batch_size` (the last one may be
/// smaller), truncating each to `stats.max_words`. With a seed the order is
/// a deterministic shuffle; without one it is the input order.
pub fn make_batches<'a>(
    docs: &'a [EncodedDocument],
    stats: &DatasetStats,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<BatchStream<'a>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if let Some(d) = docs.iter().find(|d| d.word_len != docs[0].word_len) {
        return Err(Error::Config(format!("mixed word lengths {} and {}", d.word_len, docs[0].word_len)));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(BatchStream {
        docs,
        order,
        pos: 0,
        batch_size,
        max_words: stats.max_words,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::stats::stats_from_counts;
    use proptest::prelude::*;

    fn docs(n: usize, words: usize) -> Vec<EncodedDocument> {
        let codec = CharCodec::default();
        (0..n)
            .map(|i| {
                let text = vec!["w"; words].join(" ");
                EncodedDocument::encode(&text, i % 2, &codec, words)
            })
            .collect()
    }

    #[test]
    fn batch_sizes_with_partial_tail() {
        let d = docs(10, 3);
        let stats = stats_from_counts(&[3; 10], &[0; 10]).unwrap();
        let sizes: Vec<usize> = make_batches(&d, &stats, 4, Some(1)).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn same_seed_same_order() {
        let d = docs(50, 2);
        let stats = stats_from_counts(&[2; 50], &[0; 50]).unwrap();
        let a: Vec<_> = make_batches(&d, &stats, 8, Some(7)).unwrap().map(|b| b.indices).collect();
        let b: Vec<_> = make_batches(&d, &stats, 8, Some(7)).unwrap().map(|b| b.indices).collect();
        let c: Vec<_> = make_batches(&d, &stats, 8, Some(8)).unwrap().map(|b| b.indices).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn truncation_to_max_words() {
        let d = docs(1, 100);
        let stats = stats_from_counts(&[60], &[0]).unwrap();
        assert_eq!(stats.max_words, 60);
        let batch = make_batches(&d, &stats, 1, None).unwrap().next().unwrap();
        assert_eq!(batch.doc_mask(0).iter().filter(|&&m| m).count(), 60);
        assert_eq!(batch.n_words(0), 60);
    }

    #[test]
    fn zero_batch_size_is_config_error() {
        let d = docs(2, 2);
        let stats = stats_from_counts(&[2, 2], &[0, 0]).unwrap();
        assert!(matches!(make_batches(&d, &stats, 0, None), Err(Error::Config(_))));
    }

    #[test]
    fn encode_document_layout() {
        let codec = CharCodec::default();
        let doc = EncodedDocument::encode("hello world 日本", 1, &codec, 5);
        assert_eq!(doc.n_words, 3);
        assert_eq!(doc.dropped_words, 1);
        assert_eq!(codec.decode(doc.word(1)), "world");
        assert!(doc.word(2).iter().all(|&c| c == PAD_ID));
        assert!(doc.chars[3 * 20..].iter().all(|&c| c == PAD_ID));
        assert_eq!(doc.mask(), vec![true, true, true, false, false]);

        let empty = EncodedDocument::encode("", 0, &codec, 4);
        assert_eq!(empty.n_words, 0);
        assert!(empty.chars.iter().all(|&c| c == PAD_ID));
    }

    proptest! {
        #[test]
        fn masks_are_prefixes(lengths in prop::collection::vec(0usize..30, 1..20), cap in 1usize..25) {
            let codec = CharCodec::default();
            let d: Vec<_> = lengths
                .iter()
                .map(|&n| EncodedDocument::encode(&vec!["ab"; n].join(" "), 0, &codec, 30))
                .collect();
            let stats = stats_from_counts(&[cap], &[0]).unwrap();
            for batch in make_batches(&d, &stats, 3, Some(0)).unwrap() {
                for b in 0..batch.len() {
                    let mask = batch.doc_mask(b);
                    let n = batch.n_words(b);
                    prop_assert!(mask[n..].iter().all(|&m| !m));
                    prop_assert_eq!(n, lengths[batch.indices[b]].min(stats.max_words));
                }
            }
        }
    }
}
