use std::collections::BTreeMap;

use crate::rng::{stable_hash, SplitMix64};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassSplit {
    pub train: BTreeMap<String, Vec<String>>,
    pub test: BTreeMap<String, Vec<String>>,
}

/// Fisher–Yates driven by `SplitMix64`: for `i` from `n-1` down to 1, swap
/// `i` with `next_u64() % (i + 1)`.
pub fn shuffle_splitmix<T>(items: &mut [T], seed: u64) {
    let mut rng = SplitMix64::new(seed);
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Per class: shuffle with seed `seed ^ fnv1a(class)`, then the first
/// `floor(0.8 n)` files train and the rest test.
pub fn split_80_20(class_to_filenames: &BTreeMap<String, Vec<String>>, seed: u64) -> ClassSplit {
    let mut out = ClassSplit::default();
    for (class, files) in class_to_filenames {
        let mut files = files.clone();
        shuffle_splitmix(&mut files, seed ^ stable_hash(class));
        let n_train = files.len() * 4 / 5;
        let test = files.split_off(n_train);
        out.train.insert(class.clone(), files);
        out.test.insert(class.clone(), test);
    }
    out
}
