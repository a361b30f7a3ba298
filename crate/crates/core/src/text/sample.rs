use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LabeledText;

/// Seeded class-balanced subset of at most `n` documents: classes are
/// visited round-robin, each drawing from its own shuffled pool until
/// exhausted. The result keeps the input order.
pub fn stratified_subset(docs: &[LabeledText], n: usize, seed: u64) -> Vec<LabeledText> {
    let classes = docs.iter().map(|d| d.label + 1).max().unwrap_or(0);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, d) in docs.iter().enumerate() {
        pools[d.label].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pool in &mut pools {
        pool.shuffle(&mut rng);
        pool.reverse();
    }
    let mut picked = Vec::with_capacity(n.min(docs.len()));
    while picked.len() < n.min(docs.len()) {
        for pool in pools.iter_mut() {
            if picked.len() == n {
                break;
            }
            if let Some(i) = pool.pop() {
                picked.push(i);
            }
        }
    }
    picked.sort_unstable();
    picked.into_iter().map(|i| docs[i].clone()).collect()
}
