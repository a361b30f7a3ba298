use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledText;

/// `n` lowercase documents of 3 to 8 random words, alternating labels.
/// Label 1 documents contain the letter `z` in one word; label 0 documents
/// never contain it.
pub fn letter_z_corpus(n: usize, seed: u64) -> Vec<LabeledText> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let n_words = rng.gen_range(3..=8);
            let mut words: Vec<String> = (0..n_words)
                .map(|_| {
                    let len = rng.gen_range(2..=8);
                    (0..len).map(|_| rng.gen_range(b'a'..=b'y') as char).collect()
                })
                .collect();
            if label == 1 {
                let w = rng.gen_range(0..n_words);
                let at = rng.gen_range(0..=words[w].len());
                words[w].insert(at, 'z');
            }
            LabeledText { label, text: words.join(" ") }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_matches_letter_z() {
        let docs = letter_z_corpus(200, 3);
        assert_eq!(docs.iter().filter(|d| d.label == 1).count(), 100);
        for d in &docs {
            assert_eq!(d.text.contains('z'), d.label == 1);
            assert!((3..=8).contains(&d.text.split(' ').count()));
        }
        assert_eq!(letter_z_corpus(10, 1), letter_z_corpus(10, 1));
    }
}
