use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of words kept, by total train frequency.
pub const VOCAB_CAP: usize = 50_000;

/// Alphanumeric runs of lowercased text. Unlike the character model's
/// whitespace tokens, punctuation never sticks to a word here.
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty())
}

/// Sorted `(id, weight)` pairs with strictly increasing ids and no zero
/// weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    /// Builds a vector from pairs in any order, summing repeated ids and
    /// dropping zeros.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|&(id, _)| id);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
        for (id, w) in pairs {
            match entries.last_mut() {
                Some(last) if last.0 == id => last.1 += w,
                _ => entries.push((id, w)),
            }
        }
        entries.retain(|&(_, w)| w != 0.0);
        SparseVector { entries }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: usize) -> f64 {
        self.entries
            .binary_search_by_key(&id, |&(i, _)| i)
            .map_or(0.0, |k| self.entries[k].1)
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w * w).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.1 *= factor;
        }
    }
}

/// Word ids and document frequencies from a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    ids: HashMap<String, usize>,
    words: Vec<String>,
    df: Vec<usize>,
    n_docs: usize,
}

impl Vocabulary {
    /// Keeps the `cap` most frequent words (total count, ties by word).
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a str>, cap: usize) -> Result<Self> {
        let mut count: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut n_docs = 0;
        for doc in docs {
            n_docs += 1;
            let mut seen: HashMap<&str, ()> = HashMap::new();
            for w in words(doc) {
                let e = count.entry(w).or_default();
                e.0 += 1;
                if seen.insert(w, ()).is_none() {
                    e.1 += 1;
                }
            }
        }
        if n_docs == 0 {
            return Err(Error::Config("cannot build a vocabulary from zero documents".into()));
        }
        let mut ranked: Vec<(&str, usize, usize)> = count.into_iter().map(|(w, (c, d))| (w, c, d)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(cap);
        Ok(Vocabulary {
            ids: ranked.iter().enumerate().map(|(i, r)| (r.0.to_string(), i)).collect(),
            words: ranked.iter().map(|r| r.0.to_string()).collect(),
            df: ranked.iter().map(|r| r.2).collect(),
            n_docs,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn df(&self, id: usize) -> usize {
        self.df[id]
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// Smoothed inverse document frequency, at least 1.
    pub fn idf(&self, id: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.df[id] as f64)).ln() + 1.0
    }
}

/// Raw counts of in-vocabulary words.
pub fn bow_features(doc: &str, vocab: &Vocabulary) -> SparseVector {
    SparseVector::from_pairs(words(doc).filter_map(|w| vocab.id(w)).map(|id| (id, 1.0)).collect())
}

/// Counts weighted by idf, scaled to unit L2 norm.
pub fn tfidf_features(doc: &str, vocab: &Vocabulary) -> SparseVector {
    let mut v = bow_features(doc, vocab);
    for e in &mut v.entries {
        e.1 *= vocab.idf(e.0);
    }
    let norm = v.norm_sq().sqrt();
    if norm > 0.0 {
        v.scale(1.0 / norm);
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Bow,
    Tfidf,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Bow => "bow",
            FeatureKind::Tfidf => "tfidf",
        }
    }

    pub fn extract(self, doc: &str, vocab: &Vocabulary) -> SparseVector {
        match self {
            FeatureKind::Bow => bow_features(doc, vocab),
            FeatureKind::Tfidf => tfidf_features(doc, vocab),
        }
    }

    /// Features of every document, in parallel.
    pub fn extract_all(self, docs: &[&str], vocab: &Vocabulary) -> Vec<SparseVector> {
        docs.par_iter().map(|d| self.extract(d, vocab)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bow_counts_words() {
        let vocab = Vocabulary::build(["a b a"], 10).unwrap();
        assert_eq!((vocab.id("a"), vocab.id("b")), (Some(0), Some(1)));
        assert_eq!(bow_features("a b a", &vocab).entries(), &[(0, 2.0), (1, 1.0)]);
        assert!(bow_features("x y z", &vocab).is_empty());
    }

    #[test]
    fn smoothed_idf_by_hand() {
        let vocab = Vocabulary::build(["a b", "a c"], 10).unwrap();
        let idf = |w| vocab.idf(vocab.id(w).unwrap());
        assert!((idf("a") - 1.0).abs() < 1e-12);
        // ln(3/2) + 1
        assert!((idf("b") - 1.405_465_108_108_164_4).abs() < 1e-12);
        assert!(idf("a") < idf("c"));
    }

    #[test]
    fn word_in_every_document_keeps_its_count() {
        let vocab = Vocabulary::build(["a b", "a c", "a a"], 10).unwrap();
        let v = tfidf_features("a a", &vocab);
        assert_eq!(v.entries(), &[(vocab.id("a").unwrap(), 1.0)]);
        // "a a b": tf(a)=2 with idf 1, tf(b)=1 with idf ln 2 + 1
        let v = tfidf_features("a a b", &vocab);
        let b = 2f64.ln() + 1.0;
        let norm = (4.0 + b * b).sqrt();
        assert!((v.get(vocab.id("a").unwrap()) - 2.0 / norm).abs() < 1e-12);
        assert!((v.get(vocab.id("b").unwrap()) - b / norm).abs() < 1e-12);
    }

    #[test]
    fn vocabulary_cap_keeps_most_frequent() {
        let vocab = Vocabulary::build(["c c c b b a d", "b"], 2).unwrap();
        assert_eq!(vocab.len(), 2);
        assert_eq!((vocab.word(0), vocab.word(1)), ("b", "c"));
        assert_eq!((vocab.df(0), vocab.df(1)), (2, 1));
        assert_eq!(vocab.n_docs(), 2);
        // ties broken alphabetically
        let vocab = Vocabulary::build(["z y x"], 2).unwrap();
        assert_eq!((vocab.word(0), vocab.word(1)), ("x", "y"));
    }

    #[test]
    fn punctuation_splits_words() {
        let got: Vec<&str> = words("reuters) - u.s. stocks,fell").collect();
        assert_eq!(got, ["reuters", "u", "s", "stocks", "fell"]);
        assert!(Vocabulary::build(std::iter::empty(), 10).is_err());
    }

    #[test]
    fn sparse_vector_merges_and_drops_zeros() {
        let v = SparseVector::from_pairs(vec![(3, 1.0), (1, 2.0), (3, -1.0), (2, 0.5)]);
        assert_eq!(v.entries(), &[(1, 2.0), (2, 0.5)]);
        assert_eq!(v.get(7), 0.0);
    }

    proptest! {
        #[test]
        fn features_ignore_word_order(
            doc in prop::collection::vec(0usize..8, 0..20),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let names = ["a", "b", "c", "d", "e", "f", "g", "h"];
            let vocab = Vocabulary::build(["a b c", "d e a", "f a b", "x"], 100).unwrap();
            let text: Vec<&str> = doc.iter().map(|&i| names[i]).collect();
            let mut shuffled = text.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            for kind in [FeatureKind::Bow, FeatureKind::Tfidf] {
                let a = kind.extract(&text.join(" "), &vocab);
                let b = kind.extract(&shuffled.join(" "), &vocab);
                prop_assert_eq!(a.entries().len(), b.entries().len());
                for (x, y) in a.entries().iter().zip(b.entries()) {
                    prop_assert_eq!(x.0, y.0);
                    prop_assert!((x.1 - y.1).abs() < 1e-12);
                }
                prop_assert!(a.entries().windows(2).all(|w| w[0].0 < w[1].0));
                prop_assert!(a.entries().iter().all(|e| e.1 != 0.0));
                if kind == FeatureKind::Tfidf && !a.is_empty() {
                    prop_assert!((a.norm_sq() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
