//! Seeded randomness helpers.
//!
//! Index draws go through `u64` so results do not depend on the target's
//! pointer width.

use rand::Rng;

/// Uniform index in `0..upper`.
pub fn index<R: Rng + ?Sized>(rng: &mut R, upper: usize) -> usize {
    rng.gen_range(0..upper as u64) as usize
}

/// Fisher-Yates shuffle.
pub fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = index(rng, i + 1);
        items.swap(i, j);
    }
}

/// `k` distinct elements drawn uniformly without replacement, in draw order.
pub fn sample<T: Clone, R: Rng + ?Sized>(items: &[T], k: usize, rng: &mut R) -> Vec<T> {
    assert!(k <= items.len(), "sample size exceeds population");
    let mut idx: Vec<usize> = (0..items.len()).collect();
    for i in 0..k {
        let j = i + index(rng, items.len() - i);
        idx.swap(i, j);
    }
    idx[..k].iter().map(|&i| items[i].clone()).collect()
}
